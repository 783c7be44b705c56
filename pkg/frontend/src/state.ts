import { ApiError, type ReviewApi } from "./api.js";
import { orderQueue, pageCount, paginate } from "./queue.js";
import type {
  LabelState,
  Progress,
  RefactorVerdict,
  ReviewItem,
  ToolVerdict,
} from "./types.js";

export const PAGE_SIZE = 50;

export type PendingVerdict = {
  tool: ToolVerdict | null;
  refactor: RefactorVerdict | null;
};

// All UI state lives here; the DOM layer is a dumb projection of it. Every
// verdict shown as saved went through the server first (optimistic marking is
// reverted when the POST fails), so a reload can never disagree with the UI.
export class TriageSession {
  items: ReviewItem[] = [];
  total = 0;
  cursor = 0;
  page = 0;
  pageSize = PAGE_SIZE;
  progress: Progress | null = null;
  pending: PendingVerdict = { tool: null, refactor: null };
  loadError: string | null = null;
  submitError: string | null = null;

  constructor(private api: ReviewApi, public reviewer: string) {}

  async load(): Promise<void> {
    this.loadError = null;
    try {
      const payload = await this.api.loadQueue(this.reviewer);
      this.items = orderQueue(payload.items);
      this.total = payload.total;
      this.progress = await this.api.getProgress();
      this.cursor = Math.min(this.cursor, Math.max(0, this.items.length - 1));
    } catch (err) {
      this.loadError = err instanceof Error ? err.message : String(err);
      throw err;
    }
  }

  async refreshProgress(): Promise<void> {
    this.progress = await this.api.getProgress();
  }

  current(): ReviewItem | undefined {
    return this.items[this.cursor];
  }

  pageItems(): ReviewItem[] {
    return paginate(this.items, this.page, this.pageSize);
  }

  pageCount(): number {
    return pageCount(this.items.length, this.pageSize);
  }

  private syncPage(): void {
    this.page = Math.floor(this.cursor / this.pageSize);
  }

  next(): void {
    if (this.cursor < this.items.length - 1) this.cursor += 1;
    this.pending = { tool: null, refactor: null };
    this.submitError = null;
    this.syncPage();
  }

  prev(): void {
    if (this.cursor > 0) this.cursor -= 1;
    this.pending = { tool: null, refactor: null };
    this.submitError = null;
    this.syncPage();
  }

  setToolVerdict(verdict: ToolVerdict): void {
    this.pending.tool = verdict;
  }

  setRefactorVerdict(verdict: RefactorVerdict): void {
    this.pending.refactor = verdict;
  }

  labeledCount(): number {
    return this.items.filter((item) => item.label).length;
  }

  // POST the pending verdict for the current item. Optimistic: the item is
  // marked locally, then reverted if the server rejects the label.
  async submit(): Promise<boolean> {
    const item = this.current();
    if (!item || !this.pending.tool) return false;
    const previous: LabelState = item.label;
    const optimistic: LabelState = {
      tool_verdict: this.pending.tool,
      refactor_verdict: this.pending.refactor,
      note: "",
    };
    item.label = optimistic;
    this.submitError = null;
    try {
      const response = await this.api.submitLabel({
        finding_id: item.finding_id,
        reviewer: this.reviewer,
        tool_verdict: this.pending.tool,
        refactor_verdict: this.pending.refactor,
      });
      this.progress = response.progress;
      this.pending = { tool: null, refactor: null };
      return true;
    } catch (err) {
      item.label = previous;
      this.submitError =
        err instanceof ApiError ? `${err.status || "network"}: ${err.message}` : String(err);
      return false;
    }
  }

  async submitAndAdvance(): Promise<boolean> {
    const ok = await this.submit();
    if (ok) this.next();
    return ok;
  }
}
