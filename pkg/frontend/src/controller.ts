// One-task-at-a-time annotation flow.
//
// The controller owns all state transitions and never touches the DOM; the
// view sink renders whatever it is told. A submission is sent at most once
// at a time and the queue only advances after the server acknowledges, so a
// choice is never silently dropped. Invalid choices are rejected outright:
// the controller cannot emit a rating outside 0..4 or a verdict outside the
// three options.

import {
  ApiError,
  Choice,
  Progress,
  RATING_VALUES,
  ServiceClient,
  Task,
  TaskKind,
  VERDICT_VALUES,
} from "./api.js";
import { choiceForKey } from "./keyboard.js";

export type ControllerState = "loading" | "task" | "empty" | "error" | "submitting";

export type SubmitOutcome = "submitted" | "blocked" | "conflict" | "rejected" | "failed";

export interface ViewSink {
  showTask(task: Task): void;
  showEmpty(): void;
  showRetryBanner(message: string): void;
  showConflict(message: string): void;
  showInlineError(message: string): void;
  showHint(message: string): void;
  showSelection(choice: Choice): void;
  setSubmitEnabled(enabled: boolean): void;
  showProgress(progress: Progress, stale: boolean, fetchedAt: number): void;
}

function isValidChoice(choice: Choice, kind: TaskKind): boolean {
  if (kind === "relevance") {
    return choice.kind === "rating" && (RATING_VALUES as readonly number[]).includes(choice.value);
  }
  return choice.kind === "verdict" && (VERDICT_VALUES as readonly string[]).includes(choice.value);
}

export class AnnotationController {
  private state: ControllerState = "loading";
  private current: Task | null = null;
  private choice: Choice | null = null;
  private imagesReady = false;
  private inFlight = false;
  private lastProgress: { progress: Progress; fetchedAt: number } | null = null;

  constructor(
    private client: ServiceClient,
    private annotator: string,
    private kind: TaskKind,
    private view: ViewSink,
    private now: () => number = Date.now,
  ) {}

  getState(): ControllerState {
    return this.state;
  }

  currentTask(): Task | null {
    return this.current;
  }

  currentChoice(): Choice | null {
    return this.choice;
  }

  async start(): Promise<void> {
    await this.refreshProgress();
    await this.loadNext();
  }

  async loadNext(): Promise<void> {
    this.state = "loading";
    this.current = null;
    this.choice = null;
    this.imagesReady = false;
    try {
      const task = await this.client.nextTask(this.kind, this.annotator);
      if (task === null) {
        this.state = "empty";
        this.view.showEmpty();
        return;
      }
      this.current = task;
      // A rating view has one image; a verdict view must show every
      // context image before submission unlocks. No images: nothing to wait for.
      this.imagesReady = task.kind === "span_verdict" ? task.contextImageUrls.length === 0 : false;
      this.state = "task";
      this.view.showTask(task);
      this.syncSubmittable();
    } catch (error) {
      this.state = "error";
      this.view.showRetryBanner(error instanceof Error ? error.message : "network failure");
    }
  }

  async retry(): Promise<void> {
    if (this.state === "error") {
      await this.loadNext();
    }
  }

  markImagesReady(): void {
    this.imagesReady = true;
    this.syncSubmittable();
  }

  select(choice: Choice): boolean {
    if (this.current === null || !isValidChoice(choice, this.kind)) {
      return false;
    }
    this.choice = choice;
    this.view.showSelection(choice);
    this.syncSubmittable();
    return true;
  }

  canSubmit(): boolean {
    return this.current !== null && this.choice !== null && this.imagesReady && !this.inFlight;
  }

  private syncSubmittable(): void {
    this.view.setSubmitEnabled(this.canSubmit());
  }

  async submit(): Promise<SubmitOutcome> {
    if (!this.canSubmit()) {
      this.view.showHint("select an option first");
      return "blocked";
    }
    const task = this.current as Task;
    const choice = this.choice as Choice;
    this.inFlight = true;
    this.state = "submitting";
    this.syncSubmittable();
    try {
      if (task.kind === "relevance" && choice.kind === "rating") {
        await this.client.submitRating(task, this.annotator, choice.value);
      } else if (task.kind === "span_verdict" && choice.kind === "verdict") {
        await this.client.submitVerdict(task, this.annotator, choice.value);
      } else {
        this.view.showInlineError("choice does not match the task kind");
        return "rejected";
      }
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // Task got closed underneath us; skip forward.
        this.view.showConflict(error.message);
        this.inFlight = false;
        await this.loadNext();
        return "conflict";
      }
      if (error instanceof ApiError && error.status >= 400 && error.status < 500) {
        // Stay on the task with the choice intact so nothing is lost.
        this.state = "task";
        this.view.showInlineError(error.message);
        return "rejected";
      }
      this.state = "task";
      this.view.showRetryBanner(error instanceof Error ? error.message : "network failure");
      return "failed";
    } finally {
      this.inFlight = false;
      this.syncSubmittable();
    }
    // Acknowledged: only now advance.
    await this.refreshProgress();
    await this.loadNext();
    return "submitted";
  }

  handleKey(key: string): void {
    if (key === "Enter") {
      void this.submit();
      return;
    }
    const choice = choiceForKey(this.kind, key);
    if (choice !== null) {
      this.select(choice);
    }
  }

  async refreshProgress(): Promise<void> {
    try {
      const progress = await this.client.progress();
      this.lastProgress = { progress, fetchedAt: this.now() };
      this.view.showProgress(progress, false, this.lastProgress.fetchedAt);
    } catch {
      if (this.lastProgress !== null) {
        this.view.showProgress(this.lastProgress.progress, true, this.lastProgress.fetchedAt);
      }
    }
  }
}
