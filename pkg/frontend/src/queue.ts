import type { ReviewItem } from "./types.js";

// Unlabeled items first (labeling is the bottleneck), then chart name, then
// finding id so the order is total and stable across reloads.
export function orderQueue(items: ReviewItem[]): ReviewItem[] {
  return [...items].sort((a, b) => {
    const labeledA = a.label ? 1 : 0;
    const labeledB = b.label ? 1 : 0;
    if (labeledA !== labeledB) return labeledA - labeledB;
    const chartA = a.chart ?? "";
    const chartB = b.chart ?? "";
    if (chartA !== chartB) return chartA < chartB ? -1 : 1;
    return a.finding_id < b.finding_id ? -1 : a.finding_id > b.finding_id ? 1 : 0;
  });
}

export function pageCount(total: number, pageSize: number): number {
  return total === 0 ? 1 : Math.ceil(total / pageSize);
}

export function paginate<T>(items: T[], page: number, pageSize: number): T[] {
  const start = page * pageSize;
  return items.slice(start, start + pageSize);
}
