/** Geometry for trajectory sparklines.
 *
 * Input points are the (day, value) excerpt pairs embedded in an
 * iteration record, i.e. exactly the rows the judge saw. No cohort
 * re-query happens here.
 */

export interface SparklineGeometry {
  path: string;
  width: number;
  height: number;
  /** y pixel of the last point; used for the end dot */
  endX: number;
  endY: number;
}

function round2(v: number): number {
  return Math.round(v * 100) / 100;
}

export function sparklineGeometry(
  points: ReadonlyArray<readonly [number, number]>,
  width = 120,
  height = 28,
  pad = 3,
): SparklineGeometry | null {
  if (points.length === 0) return null;
  const xs = points.map((p) => p[0]);
  const ys = points.map((p) => p[1]);
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const yMin = Math.min(...ys);
  const yMax = Math.max(...ys);
  const innerW = width - 2 * pad;
  const innerH = height - 2 * pad;
  const sx = (x: number): number =>
    xMax === xMin ? width / 2 : pad + ((x - xMin) / (xMax - xMin)) * innerW;
  // flat series draws as a midline rather than hugging an edge
  const sy = (y: number): number =>
    yMax === yMin ? height / 2 : pad + (1 - (y - yMin) / (yMax - yMin)) * innerH;

  const parts = points.map(([x, y], i) => {
    const cmd = i === 0 ? "M" : "L";
    return `${cmd}${round2(sx(x))},${round2(sy(y))}`;
  });
  const last = points[points.length - 1]!;
  return {
    path: parts.join(" "),
    width,
    height,
    endX: round2(sx(last[0])),
    endY: round2(sy(last[1])),
  };
}
