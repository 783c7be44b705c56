import type { Progress, Proportion } from "./types.js";

export function formatProportion(prop: Proportion | null): string {
  if (!prop) return "—";
  const ac = prop.agresti_coull;
  return `${prop.x}/${prop.n} = ${prop.point.toFixed(3)}  [${ac.lo.toFixed(3)}, ${ac.hi.toFixed(3)}]`;
}

export function progressLines(progress: Progress | null): string[] {
  if (!progress) return ["progress unavailable"];
  return [
    `labeled ${progress.labeled}/${progress.total}`,
    `tool TP   ${formatProportion(progress.t_tp)}`,
    `tool FP   ${formatProportion(progress.t_fp)}`,
    `fix ok    ${formatProportion(progress.llm_i_c)}`,
    `fix wrong ${formatProportion(progress.llm_i_w)}`,
    `refused   ${formatProportion(progress.llm_i_r)}`,
  ];
}

// Diff text reaches the DOM via textContent only; this function exists so the
// losslessness is a testable property rather than a rendering accident.
export function renderDiffText(diff: string | null): string {
  return diff ?? "";
}
