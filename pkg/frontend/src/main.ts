import { HttpReviewApi } from "./api.js";
import { TriageApp } from "./app.js";
import { TriageSession } from "./state.js";

const reviewer =
  new URLSearchParams(window.location.search).get("reviewer") ??
  window.localStorage.getItem("chart-sentry-reviewer") ??
  "reviewer";
window.localStorage.setItem("chart-sentry-reviewer", reviewer);

const session = new TriageSession(new HttpReviewApi(""), reviewer);
const app = new TriageApp(session);
app.bind();
void app.reload();
