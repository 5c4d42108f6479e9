import { describe, expect, it } from "vitest";

import { Route, hashFor, parseHash } from "../src/router.js";

describe("parseHash", () => {
  it("maps empty or unknown hashes to the run list", () => {
    const junk = [
      "",
      "#",
      "#/",
      "#/nope",
      "#/runs/x/bogus",
      "#/runs/x/it",
      "#/runs/x/it/-1",
      "#/runs/x/it/2.5",
      "#/runs/x/it/abc",
      "#/runs/x/stats/extra",
    ];
    for (const hash of junk) {
      expect(parseHash(hash), hash).toEqual({ name: "list" });
    }
  });

  it("parses the three route shapes", () => {
    expect(parseHash("#/runs")).toEqual({ name: "list" });
    expect(parseHash("#/runs/demo")).toEqual({
      name: "run",
      runId: "demo",
      iteration: null,
    });
    expect(parseHash("#/runs/demo/it/4")).toEqual({
      name: "run",
      runId: "demo",
      iteration: 4,
    });
    expect(parseHash("#/runs/demo/stats")).toEqual({
      name: "stats",
      runId: "demo",
    });
  });

  it("round-trips every route through hashFor", () => {
    const routes: Route[] = [
      { name: "list" },
      { name: "run", runId: "demo", iteration: null },
      { name: "run", runId: "demo", iteration: 0 },
      { name: "run", runId: "a b/c", iteration: 2 },
      { name: "stats", runId: "with space" },
    ];
    for (const route of routes) {
      expect(parseHash(hashFor(route))).toEqual(route);
    }
  });
});
