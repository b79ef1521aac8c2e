// DOM rendering of the annotation flow. Thin by design: all decisions live
// in the controller; this file only draws what it is told.

import {
  Choice,
  Progress,
  RATING_LABELS,
  RATING_VALUES,
  Task,
  VERDICT_VALUES,
} from "./api.js";
import type { ViewSink } from "./controller.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class DomView implements ViewSink {
  private taskArea: HTMLElement;
  private optionArea: HTMLElement;
  private statusArea: HTMLElement;
  private progressArea: HTMLElement;
  private submitButton: HTMLButtonElement;
  private onSelect: (choice: Choice) => void = () => {};
  private onSubmit: () => void = () => {};
  private onRetry: () => void = () => {};
  private onImagesReady: () => void = () => {};

  constructor(root: HTMLElement) {
    this.progressArea = el("div", "progress");
    this.taskArea = el("div", "task");
    this.optionArea = el("div", "options");
    this.statusArea = el("div", "status");
    this.submitButton = el("button", "submit") as HTMLButtonElement;
    this.submitButton.textContent = "Submit (Enter)";
    this.submitButton.disabled = true;
    this.submitButton.onclick = () => this.onSubmit();
    root.replaceChildren(
      this.progressArea,
      this.taskArea,
      this.optionArea,
      this.submitButton,
      this.statusArea,
    );
  }

  bind(handlers: {
    onSelect: (choice: Choice) => void;
    onSubmit: () => void;
    onRetry: () => void;
    onImagesReady: () => void;
  }): void {
    this.onSelect = handlers.onSelect;
    this.onSubmit = handlers.onSubmit;
    this.onRetry = handlers.onRetry;
    this.onImagesReady = handlers.onImagesReady;
  }

  private trackImageLoads(images: HTMLImageElement[]): void {
    if (images.length === 0) {
      this.onImagesReady();
      return;
    }
    let remaining = images.length;
    const done = () => {
      remaining -= 1;
      if (remaining === 0) this.onImagesReady();
    };
    for (const image of images) {
      if (image.complete) {
        done();
      } else {
        image.addEventListener("load", done, { once: true });
        image.addEventListener("error", done, { once: true });
      }
    }
  }

  showTask(task: Task): void {
    this.statusArea.replaceChildren();
    this.optionArea.replaceChildren();
    const images: HTMLImageElement[] = [];

    if (task.kind === "relevance") {
      const query = el("p", "query", task.query);
      const image = el("img", "piece") as HTMLImageElement;
      image.src = task.imageUrl;
      image.alt = `retrieved piece ${task.pieceId}`;
      images.push(image);
      this.taskArea.replaceChildren(query, image);
      for (const value of RATING_VALUES) {
        const button = el("button", "option", `${value} ${RATING_LABELS[value]}`);
        button.dataset.value = String(value);
        button.onclick = () => this.onSelect({ kind: "rating", value });
        this.optionArea.appendChild(button);
      }
    } else {
      const span = el("p", "span-text", task.spanText);
      const strip = el("div", "thumbnails");
      for (const url of task.contextImageUrls) {
        const thumb = el("img", "thumb") as HTMLImageElement;
        thumb.src = url;
        thumb.alt = "context image";
        images.push(thumb);
        strip.appendChild(thumb);
      }
      this.taskArea.replaceChildren(span, strip);
      for (const value of VERDICT_VALUES) {
        const button = el("button", "option", `${value[0]} ${value}`);
        button.dataset.value = value;
        button.onclick = () => this.onSelect({ kind: "verdict", value });
        this.optionArea.appendChild(button);
      }
    }
    this.trackImageLoads(images);
  }

  showEmpty(): void {
    this.taskArea.replaceChildren(el("p", "empty", "Queue empty. Nothing left to annotate."));
    this.optionArea.replaceChildren();
    this.statusArea.replaceChildren();
  }

  showRetryBanner(message: string): void {
    const banner = el("div", "banner error");
    banner.appendChild(el("span", undefined, `Service unreachable: ${message}`));
    const retry = el("button", "retry", "Retry");
    retry.onclick = () => this.onRetry();
    banner.appendChild(retry);
    this.statusArea.replaceChildren(banner);
  }

  showConflict(message: string): void {
    this.statusArea.replaceChildren(el("div", "banner conflict", `Task was closed: ${message}. Skipping.`));
  }

  showInlineError(message: string): void {
    this.statusArea.replaceChildren(el("div", "banner reject", message));
  }

  showHint(message: string): void {
    this.statusArea.replaceChildren(el("div", "hint", message));
  }

  showSelection(choice: Choice): void {
    const selected = String(choice.value);
    for (const button of Array.from(this.optionArea.querySelectorAll("button"))) {
      button.classList.toggle("selected", button.dataset.value === selected);
    }
  }

  setSubmitEnabled(enabled: boolean): void {
    this.submitButton.disabled = !enabled;
  }

  showProgress(progress: Progress, stale: boolean, fetchedAt: number): void {
    const parts: string[] = [];
    for (const kind of ["relevance", "span_verdict"] as const) {
      const counts = progress[kind];
      const total = counts.open + counts.complete;
      parts.push(`${kind}: ${counts.complete}/${total}`);
    }
    let text = parts.join("  ·  ");
    if (stale) {
      text += `  (stale, as of ${new Date(fetchedAt).toLocaleTimeString()})`;
    }
    const bar = el("div", stale ? "counts stale" : "counts", text);
    this.progressArea.replaceChildren(bar);
  }
}
