import { describe, expect, it } from "vitest";

import { sparklineGeometry } from "../src/sparkline.js";

describe("sparklineGeometry", () => {
  it("returns null for an empty series", () => {
    expect(sparklineGeometry([])).toBeNull();
  });

  it("spans the padded box and ends at the last point", () => {
    const g = sparklineGeometry(
      [
        [0, 1],
        [7, 3],
        [14, 2],
      ],
      120,
      28,
      3,
    );
    expect(g).not.toBeNull();
    expect(g!.path).toBe("M3,25 L60,3 L117,14");
    expect(g!.endX).toBe(117);
    expect(g!.endY).toBe(14);
  });

  it("draws a flat series on the midline", () => {
    const g = sparklineGeometry([
      [0, 5],
      [7, 5],
    ]);
    expect(g!.path).toBe("M3,14 L117,14");
  });

  it("centers a single point", () => {
    const g = sparklineGeometry([[3, 9]]);
    expect(g!.path).toBe("M60,14");
    expect(g!.endX).toBe(60);
    expect(g!.endY).toBe(14);
  });
});
