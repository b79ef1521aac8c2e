import { HttpServiceClient, TaskKind } from "./api.js";
import { AnnotationController } from "./controller.js";
import { DomView } from "./view.js";

function param(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

function install(): void {
  const root = document.querySelector<HTMLElement>("#app");
  if (!root) throw new Error("missing #app container");

  const annotator = param("annotator", "anonymous");
  const kindParam = param("kind", "relevance");
  const kind: TaskKind = kindParam === "span_verdict" ? "span_verdict" : "relevance";

  const view = new DomView(root);
  const controller = new AnnotationController(new HttpServiceClient(""), annotator, kind, view);
  view.bind({
    onSelect: (choice) => controller.select(choice),
    onSubmit: () => void controller.submit(),
    onRetry: () => void controller.retry(),
    onImagesReady: () => controller.markImagesReady(),
  });

  document.addEventListener("keydown", (event) => {
    const tag = (event.target as HTMLElement).tagName;
    if (tag === "INPUT" || tag === "TEXTAREA") return;
    controller.handleKey(event.key);
  });

  void controller.start();
}

install();
