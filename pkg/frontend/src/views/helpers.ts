/** Small DOM construction helpers; no framework, no templates. */

export interface ElOptions {
  className?: string;
  text?: string;
  attrs?: Record<string, string>;
  on?: Partial<Record<string, (ev: Event) => void>>;
}

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  options: ElOptions = {},
  children: ReadonlyArray<Node | string> = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (options.className) node.className = options.className;
  if (options.text !== undefined) node.textContent = options.text;
  if (options.attrs) {
    for (const [name, value] of Object.entries(options.attrs)) {
      node.setAttribute(name, value);
    }
  }
  if (options.on) {
    for (const [event, handler] of Object.entries(options.on)) {
      if (handler) node.addEventListener(event, handler);
    }
  }
  for (const child of children) {
    node.append(child instanceof Node ? child : document.createTextNode(child));
  }
  return node;
}

export function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

const STATUS_CLASSES: Record<string, string> = {
  running: "badge badge-running",
  awaiting_human: "badge badge-awaiting",
  converged: "badge badge-converged",
  aborted: "badge badge-aborted",
  failed: "badge badge-failed",
};

export function statusBadge(status: string): HTMLElement {
  return el("span", {
    className: STATUS_CLASSES[status] ?? "badge",
    text: status,
    attrs: { "data-status": status },
  });
}

export function svgSparkline(
  geometry: { path: string; width: number; height: number; endX: number; endY: number },
): SVGSVGElement {
  const ns = "http://www.w3.org/2000/svg";
  const svg = document.createElementNS(ns, "svg");
  svg.setAttribute("class", "sparkline");
  svg.setAttribute("viewBox", `0 0 ${geometry.width} ${geometry.height}`);
  svg.setAttribute("width", String(geometry.width));
  svg.setAttribute("height", String(geometry.height));
  const path = document.createElementNS(ns, "path");
  path.setAttribute("d", geometry.path);
  path.setAttribute("fill", "none");
  path.setAttribute("stroke", "currentColor");
  path.setAttribute("stroke-width", "1.5");
  path.setAttribute("stroke-linecap", "round");
  svg.append(path);
  const dot = document.createElementNS(ns, "circle");
  dot.setAttribute("cx", String(geometry.endX));
  dot.setAttribute("cy", String(geometry.endY));
  dot.setAttribute("r", "2");
  dot.setAttribute("fill", "currentColor");
  svg.append(dot);
  return svg;
}
