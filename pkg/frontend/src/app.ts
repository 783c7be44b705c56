import { progressLines, renderDiffText } from "./format.js";
import type { TriageSession } from "./state.js";
import type { ReviewItem } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function verdictBadge(item: ReviewItem): string {
  if (!item.label) return "·";
  return item.label.tool_verdict === "true_positive" ? "TP" : "FP";
}

export class TriageApp {
  constructor(private session: TriageSession) {}

  bind(): void {
    document.addEventListener("keydown", (event) => {
      if (event.target instanceof HTMLInputElement) return;
      void this.onKey(event.key);
    });
    el("retry").addEventListener("click", () => void this.reload());
    el("prev-page").addEventListener("click", () => this.movePage(-1));
    el("next-page").addEventListener("click", () => this.movePage(1));
  }

  async reload(): Promise<void> {
    try {
      await this.session.load();
    } catch {
      // load error is rendered from session state
    }
    this.render();
  }

  async onKey(key: string): Promise<void> {
    const session = this.session;
    switch (key) {
      case "j":
      case "ArrowDown":
        session.next();
        break;
      case "k":
      case "ArrowUp":
        session.prev();
        break;
      case "t":
        session.setToolVerdict("true_positive");
        break;
      case "f":
        session.setToolVerdict("false_positive");
        break;
      case "c":
        session.setRefactorVerdict("correct");
        break;
      case "w":
        session.setRefactorVerdict("wrong");
        break;
      case "r":
        session.setRefactorVerdict("refused");
        break;
      case "Enter":
        await session.submitAndAdvance();
        break;
      case "g":
        await session.refreshProgress();
        break;
      default:
        return;
    }
    this.render();
  }

  movePage(delta: number): void {
    const pages = this.session.pageCount();
    const page = Math.min(Math.max(this.session.page + delta, 0), pages - 1);
    this.session.page = page;
    this.session.cursor = Math.min(
      page * this.session.pageSize,
      Math.max(0, this.session.items.length - 1),
    );
    this.render();
  }

  render(): void {
    const session = this.session;
    el("banner").hidden = !session.loadError;
    el("banner-text").textContent = session.loadError
      ? `cannot reach review service: ${session.loadError}`
      : "";

    const list = el("queue-list");
    list.textContent = "";
    const pageStart = session.page * session.pageSize;
    session.pageItems().forEach((item, index) => {
      const row = document.createElement("li");
      const absolute = pageStart + index;
      row.className = absolute === session.cursor ? "row selected" : "row";
      if (item.label) row.classList.add("labeled");
      if (item.label?.tool_verdict === "false_positive") row.classList.add("struck");
      row.textContent = `${verdictBadge(item)}  ${item.chart ?? "?"} · ${item.resource.kind}/${item.resource.name}`;
      row.addEventListener("click", () => {
        session.cursor = absolute;
        session.pending = { tool: null, refactor: null };
        this.render();
      });
      list.appendChild(row);
    });
    el("page-indicator").textContent = `page ${session.page + 1}/${session.pageCount()} · ${session.labeledCount()}/${session.items.length} labeled`;

    const item = session.current();
    el("policy").textContent = item
      ? `${item.description}${item.tool ? `  (${item.tool} ${item.policy_id ?? ""})` : ""}`
      : "queue empty";
    el("resource").textContent = item
      ? `${item.resource.kind} ${item.resource.namespace}/${item.resource.name}` +
        (item.resource.container ? ` · container ${item.resource.container}` : "")
      : "";
    el("snippet").textContent = item?.snippet ?? "(snippet unavailable)";
    el("diff").textContent = item ? renderDiffText(item.diff) || "(no remediation attempt)" : "";
    el("outcome").textContent = item?.outcome ? `pipeline outcome: ${item.outcome}` : "";

    const pending = session.pending;
    el("pending").textContent = item
      ? `verdict: ${pending.tool ?? item.label?.tool_verdict ?? "—"}` +
        ` · patch: ${pending.refactor ?? item.label?.refactor_verdict ?? "—"}` +
        (session.submitError ? `  ✗ ${session.submitError}` : "")
      : "";

    el("progress").textContent = progressLines(session.progress).join("\n");
  }
}
