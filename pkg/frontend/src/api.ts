import type { LabelBody, Progress, QueuePayload, SubmitResponse } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

// The session only ever talks through this interface; tests substitute an
// in-memory implementation that mirrors the service contract.
export interface ReviewApi {
  loadQueue(reviewer: string): Promise<QueuePayload>;
  submitLabel(body: LabelBody): Promise<SubmitResponse>;
  getProgress(): Promise<Progress>;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class HttpReviewApi implements ReviewApi {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, `review service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  loadQueue(reviewer: string): Promise<QueuePayload> {
    const query = reviewer ? `?reviewer=${encodeURIComponent(reviewer)}` : "";
    return this.request<QueuePayload>(`/api/queue${query}`);
  }

  submitLabel(body: LabelBody): Promise<SubmitResponse> {
    return this.request<SubmitResponse>("/api/labels", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getProgress(): Promise<Progress> {
    return this.request<Progress>("/api/progress");
  }
}
