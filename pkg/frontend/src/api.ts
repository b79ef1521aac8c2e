// Typed client for the annotation service JSON API.

export type TaskKind = "relevance" | "span_verdict";

export const RATING_VALUES = [0, 1, 2, 3, 4] as const;
export type RatingValue = (typeof RATING_VALUES)[number];
export const RATING_LABELS: Record<RatingValue, string> = {
  0: "unsure",
  1: "no relevance",
  2: "mild relevance",
  3: "high relevance",
  4: "complete relevance",
};

export const VERDICT_VALUES = ["correct", "incorrect", "subjective"] as const;
export type VerdictValue = (typeof VERDICT_VALUES)[number];

export interface RatingTask {
  kind: "relevance";
  taskId: number;
  questionId: string;
  pieceId: string;
  query: string;
  imageUrl: string;
}

export interface VerdictTask {
  kind: "span_verdict";
  taskId: number;
  questionId: string;
  spanIndex: number;
  spanText: string;
  contextImageUrls: string[];
}

export type Task = RatingTask | VerdictTask;

export type Choice =
  | { kind: "rating"; value: RatingValue }
  | { kind: "verdict"; value: VerdictValue };

export interface ProgressCounts {
  open: number;
  complete: number;
}

export interface Progress {
  relevance: ProgressCounts;
  span_verdict: ProgressCounts;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

export interface ServiceClient {
  nextTask(kind: TaskKind, annotator: string): Promise<Task | null>;
  submitRating(task: RatingTask, annotator: string, rating: RatingValue): Promise<void>;
  submitVerdict(task: VerdictTask, annotator: string, verdict: VerdictValue): Promise<void>;
  progress(): Promise<Progress>;
}

interface RawTask {
  task_id: number;
  kind: TaskKind;
  payload: Record<string, unknown>;
}

function pieceUrl(baseUrl: string, pieceId: string): string {
  return `${baseUrl}/pieces/${encodeURIComponent(pieceId)}`;
}

export function taskFromPayload(baseUrl: string, raw: RawTask): Task {
  const payload = raw.payload;
  if (raw.kind === "relevance") {
    const pieceId = String(payload["piece_id"] ?? "");
    return {
      kind: "relevance",
      taskId: raw.task_id,
      questionId: String(payload["question_id"] ?? ""),
      pieceId,
      query: String(payload["query"] ?? ""),
      imageUrl: pieceUrl(baseUrl, pieceId),
    };
  }
  const contextIds = Array.isArray(payload["context_piece_ids"])
    ? (payload["context_piece_ids"] as unknown[]).map(String)
    : [];
  return {
    kind: "span_verdict",
    taskId: raw.task_id,
    questionId: String(payload["question_id"] ?? ""),
    spanIndex: Number(payload["span_index"] ?? 0),
    spanText: String(payload["span_text"] ?? ""),
    contextImageUrls: contextIds.map((id) => pieceUrl(baseUrl, id)),
  };
}

async function readError(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    return body.detail ?? response.statusText;
  } catch {
    return response.statusText;
  }
}

export class HttpServiceClient implements ServiceClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: typeof fetch = fetch.bind(globalThis),
  ) {}

  async nextTask(kind: TaskKind, annotator: string): Promise<Task | null> {
    const params = new URLSearchParams({ kind, annotator });
    const response = await this.fetchImpl(`${this.baseUrl}/tasks/next?${params}`);
    if (!response.ok) {
      throw new ApiError(response.status, await readError(response));
    }
    const body = (await response.json()) as { task: RawTask | null };
    return body.task ? taskFromPayload(this.baseUrl, body.task) : null;
  }

  private async post(path: string, payload: unknown): Promise<void> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!response.ok) {
      throw new ApiError(response.status, await readError(response));
    }
  }

  async submitRating(task: RatingTask, annotator: string, rating: RatingValue): Promise<void> {
    await this.post("/ratings", {
      task_id: task.taskId,
      annotator_id: annotator,
      question_id: task.questionId,
      piece_id: task.pieceId,
      rating,
    });
  }

  async submitVerdict(task: VerdictTask, annotator: string, verdict: VerdictValue): Promise<void> {
    await this.post("/verdicts", {
      task_id: task.taskId,
      annotator_id: annotator,
      question_id: task.questionId,
      span_index: task.spanIndex,
      verdict,
    });
  }

  async progress(): Promise<Progress> {
    const response = await this.fetchImpl(`${this.baseUrl}/progress`);
    if (!response.ok) {
      throw new ApiError(response.status, await readError(response));
    }
    return (await response.json()) as Progress;
  }
}
