/** Hash routing. The URL is the only router state. */

export type Route =
  | { name: "list" }
  | { name: "run"; runId: string; iteration: number | null }
  | { name: "stats"; runId: string };

export function parseHash(hash: string): Route {
  const cleaned = hash.replace(/^#/, "");
  const segments = cleaned.split("/").filter((s) => s.length > 0);
  if (segments.length === 0 || segments[0] !== "runs") return { name: "list" };
  if (segments.length === 1) return { name: "list" };
  const runId = decodeURIComponent(segments[1]!);
  if (segments.length === 2) return { name: "run", runId, iteration: null };
  if (segments[2] === "stats" && segments.length === 3) {
    return { name: "stats", runId };
  }
  if (segments[2] === "it" && segments.length === 4) {
    const n = Number(segments[3]);
    if (Number.isInteger(n) && n >= 0) {
      return { name: "run", runId, iteration: n };
    }
  }
  return { name: "list" };
}

export function hashFor(route: Route): string {
  switch (route.name) {
    case "list":
      return "#/runs";
    case "run":
      return route.iteration === null
        ? `#/runs/${encodeURIComponent(route.runId)}`
        : `#/runs/${encodeURIComponent(route.runId)}/it/${route.iteration}`;
    case "stats":
      return `#/runs/${encodeURIComponent(route.runId)}/stats`;
  }
}
