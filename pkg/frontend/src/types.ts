// Wire types, mirroring the review service's JSON payloads exactly
// (snake_case field names come from the server).

export type ToolVerdict = "true_positive" | "false_positive";
export type RefactorVerdict = "correct" | "wrong" | "refused";

export type LabelState = {
  tool_verdict: ToolVerdict;
  refactor_verdict: RefactorVerdict | null;
  note: string;
} | null;

export type ReviewItem = {
  finding_id: string;
  chart: string | null;
  tool: string | null;
  policy_id: string | null;
  description: string;
  severity: string;
  resource: {
    kind: string;
    name: string;
    namespace: string;
    container: string | null;
  };
  snippet: string | null;
  diff: string | null;
  outcome: string | null;
  label: LabelState;
};

export type QueuePayload = {
  items: ReviewItem[];
  total: number;
};

export type IntervalBounds = { lo: number; hi: number };

export type Proportion = {
  x: number;
  n: number;
  z: number;
  point: number;
  agresti_coull: IntervalBounds;
  wilson: IntervalBounds;
};

export type Progress = {
  labeled: number;
  total: number;
  t_tp: Proportion | null;
  t_fp: Proportion | null;
  llm_i_c: Proportion | null;
  llm_i_w: Proportion | null;
  llm_i_r: Proportion | null;
};

export type LabelBody = {
  finding_id: string;
  reviewer: string;
  tool_verdict: ToolVerdict;
  refactor_verdict?: RefactorVerdict | null;
  note?: string;
};

export type SubmitResponse = {
  saved: Record<string, unknown>;
  progress: Progress;
};
