/** Stats report route.
 *
 * Every number on this page is the raw JSON literal the API sent,
 * looked up by pointer; nothing is recomputed or reformatted on the
 * client. Analyses that failed server-side arrive as {"error": ...}
 * and render as inline error rows.
 */

import { ApiClient, ApiError, StatsDoc } from "../api.js";
import { escapePointer, rawNumber } from "../rawjson.js";
import { hashFor } from "../router.js";
import { clear, el } from "./helpers.js";

const SVG_NS = "http://www.w3.org/2000/svg";

type Json = Record<string, any>;

function isErrorDoc(value: unknown): value is { error: string } {
  return (
    typeof value === "object" &&
    value !== null &&
    typeof (value as Json).error === "string"
  );
}

function errorRow(name: string, value: { error: string }): HTMLElement {
  return el("div", { className: "banner banner-error" }, [
    el("strong", { text: name }),
    ` ${value.error}`,
  ]);
}

function cells(row: (HTMLElement | string)[]): HTMLElement {
  return el(
    "tr",
    {},
    row.map((c) => el("td", {}, [c])),
  );
}

function table(headers: string[], rows: HTMLElement[]): HTMLElement {
  return el("table", { className: "stats-table" }, [
    el(
      "thead",
      {},
      [el("tr", {}, headers.map((h) => el("th", { text: h })))],
    ),
    el("tbody", {}, rows),
  ]);
}

/** Mean-with-CI chart per dose stratum; geometry only, labels stay raw. */
function strataChart(strata: Json[]): HTMLElement {
  const width = 260;
  const height = 90;
  const pad = 14;
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("class", "strata-chart");
  const lows = strata.map((s) => Number(s.ci95_lo));
  const highs = strata.map((s) => Number(s.ci95_hi));
  const lo = Math.min(...lows);
  const hi = Math.max(...highs);
  const span = hi - lo || 1;
  const step = (width - 2 * pad) / Math.max(strata.length - 1, 1);
  const y = (v: number) => height - pad - ((v - lo) / span) * (height - 2 * pad);
  let path = "";
  strata.forEach((s, i) => {
    const x = pad + i * step;
    const whisker = document.createElementNS(SVG_NS, "line");
    whisker.setAttribute("x1", String(x));
    whisker.setAttribute("x2", String(x));
    whisker.setAttribute("y1", String(y(Number(s.ci95_lo))));
    whisker.setAttribute("y2", String(y(Number(s.ci95_hi))));
    whisker.setAttribute("class", "whisker");
    svg.append(whisker);
    const dot = document.createElementNS(SVG_NS, "circle");
    dot.setAttribute("cx", String(x));
    dot.setAttribute("cy", String(y(Number(s.mean))));
    dot.setAttribute("r", "2.5");
    svg.append(dot);
    path += `${i === 0 ? "M" : "L"}${x} ${y(Number(s.mean))} `;
  });
  const line = document.createElementNS(SVG_NS, "path");
  line.setAttribute("d", path.trim());
  line.setAttribute("fill", "none");
  line.setAttribute("class", "trend");
  svg.append(line);
  return svg as unknown as HTMLElement;
}

export class StatsView {
  private doc: StatsDoc | null = null;
  private readonly body = el("div", { className: "stats-body" });

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly win: Window,
    readonly runId: string,
  ) {}

  mount(): void {
    clear(this.root);
    this.root.append(
      el("header", {}, [
        el("h1", { text: `stats: ${this.runId}` }),
        el("nav", { className: "run-nav" }, [
          el("a", {
            text: "back to run",
            attrs: { href: hashFor({ name: "run", runId: this.runId, iteration: null }) },
          }),
          el("a", { text: "all runs", attrs: { href: hashFor({ name: "list" }) } }),
        ]),
      ]),
      this.body,
    );
    void this.load();
  }

  dispose(): void {}

  private async load(): Promise<void> {
    clear(this.body);
    this.body.append(el("p", { className: "empty", text: "loading report" }));
    try {
      this.doc = await this.api.getStats(this.runId);
    } catch (err) {
      clear(this.body);
      const message =
        err instanceof ApiError
          ? `${err.code}: ${err.message}`
          : "connection lost";
      this.body.append(el("div", { className: "banner banner-error", text: message }));
      this.body.append(
        el("button", {
          text: "retry",
          attrs: { type: "button" },
          on: { click: () => void this.load() },
        }),
      );
      return;
    }
    this.render();
  }

  /** Raw literal at pointer; falls back to the parsed value if absent. */
  private num(pointer: string, fallback?: unknown): string {
    return rawNumber(this.doc!.numbers, pointer, fallback as number | undefined);
  }

  private render(): void {
    const doc = this.doc!.value as Json;
    clear(this.body);
    this.body.append(
      this.headerSection(doc),
      this.countsSection(doc),
      this.rankSection(doc),
      this.anovaSection(doc, "anova_initial", "one-way anova: initial severity"),
      this.anovaSection(doc, "anova_doses", "one-way anova: dose counts"),
      this.stabilitySection(doc),
      this.doseSection(doc),
      this.matrixSection(doc),
      this.lmmSection(doc),
      this.lctmSection(doc),
    );
  }

  private headerSection(doc: Json): HTMLElement {
    const hyp = doc.hypothesis as Json;
    const subset = doc.subset as Json;
    return el("section", { className: "panel" }, [
      el("h2", { text: "confirmed hypothesis" }),
      el("p", {}, [
        el("strong", { text: `${hyp.id} ` }),
        el("span", { className: "statement", text: String(hyp.statement) }),
      ]),
      el("p", { className: "muted", text: `focal feature: ${hyp.focal_feature}` }),
      el(
        "div",
        { className: "subset" },
        (subset.included as string[]).map((name) =>
          el("span", { className: "chip chip-feature", text: name }),
        ),
      ),
    ]);
  }

  private countsSection(doc: Json): HTMLElement {
    const counts = doc.label_counts as Json;
    const rows = Object.keys(counts).map((label) =>
      cells([label, this.num(`/label_counts/${escapePointer(label)}`)]),
    );
    return el("section", { className: "panel", attrs: { "data-section": "label_counts" } }, [
      el("h2", { text: "phenotype counts" }),
      table(["label", "n"], rows),
    ]);
  }

  private rankSection(doc: Json): HTMLElement {
    const section = el("section", {
      className: "panel",
      attrs: { "data-section": "kruskal_peaks" },
    });
    section.append(el("h2", { text: "kruskal-wallis: peak severity by label" }));
    const kw = doc.kruskal_peaks;
    if (isErrorDoc(kw)) {
      section.append(errorRow("kruskal_peaks", kw));
      return section;
    }
    section.append(
      table(
        ["H", "df", "p", "epsilon squared", "eta squared (H)", "n"],
        [
          cells([
            el("span", {
              className: "stat-h",
              text: this.num("/kruskal_peaks/h"),
            }),
            this.num("/kruskal_peaks/df"),
            String(kw.p_display),
            this.num("/kruskal_peaks/epsilon_squared"),
            this.num("/kruskal_peaks/eta_squared_h"),
            this.num("/kruskal_peaks/n_total"),
          ]),
        ],
      ),
    );
    return section;
  }

  private anovaSection(doc: Json, key: string, title: string): HTMLElement {
    const section = el("section", {
      className: "panel",
      attrs: { "data-section": key },
    });
    section.append(el("h2", { text: title }));
    const a = doc[key];
    if (isErrorDoc(a)) {
      section.append(errorRow(key, a));
      return section;
    }
    section.append(
      table(
        ["F", "df between", "df within", "p"],
        [
          cells([
            this.num(`/${key}/f`),
            this.num(`/${key}/df_between`),
            this.num(`/${key}/df_within`),
            String(a.p_display),
          ]),
        ],
      ),
      el(
        "p",
        { className: "muted" },
        [
          "group means: ",
          Object.keys(a.group_means as Json)
            .map(
              (g) =>
                `${g}=${this.num(`/${key}/group_means/${escapePointer(g)}`)}`,
            )
            .join(", "),
        ],
      ),
    );
    return section;
  }

  private stabilitySection(doc: Json): HTMLElement {
    const section = el("section", {
      className: "panel",
      attrs: { "data-section": "stability" },
    });
    section.append(el("h2", { text: "bootstrap label stability" }));
    const st = doc.stability;
    if (isErrorDoc(st)) {
      section.append(errorRow("stability", st));
      return section;
    }
    const rows = Object.keys(st.per_label as Json).map((label) =>
      cells([label, this.num(`/stability/per_label/${escapePointer(label)}`)]),
    );
    section.append(
      table(["label", "mean max-jaccard"], rows),
      el("p", {
        className: "muted",
        text: `${this.num("/stability/n_bootstrap")} resamples, stable means >= ${this.num("/stability/threshold")}`,
      }),
    );
    return section;
  }

  private doseSection(doc: Json): HTMLElement {
    const section = el("section", {
      className: "panel",
      attrs: { "data-section": "dose_response" },
    });
    section.append(el("h2", { text: "dose response by phenotype" }));
    const byLabel = doc.dose_response as Json;
    for (const label of Object.keys(byLabel)) {
      const curve = byLabel[label];
      const block = el("div", {
        className: "dose-block",
        attrs: { "data-label": label },
      });
      block.append(el("h3", { text: label }));
      if (isErrorDoc(curve)) {
        block.append(errorRow(label, curve));
        section.append(block);
        continue;
      }
      const strata = curve.strata as Json[];
      const prefix = `/dose_response/${escapePointer(label)}/strata`;
      const rows = strata.map((s, i) => {
        const row = cells([
          this.num(`${prefix}/${i}/dose`),
          this.num(`${prefix}/${i}/n`),
          this.num(`${prefix}/${i}/mean`),
          `[${this.num(`${prefix}/${i}/ci95_lo`)}, ${this.num(`${prefix}/${i}/ci95_hi`)}]`,
          this.num(`${prefix}/${i}/pct_change_from_peak`),
          s.sparse ? el("span", { className: "chip chip-sparse", text: "sparse" }) : "",
        ]);
        return row;
      });
      block.append(
        table(["dose", "n", "mean peak", "95% ci", "change from peak", ""], rows),
      );
      if (strata.length > 0) block.append(strataChart(strata));
      block.append(
        el("p", {
          className: "muted",
          text: `${this.num(`/dose_response/${escapePointer(label)}/observations`)} participants`,
        }),
      );
      section.append(block);
    }
    return section;
  }

  private matrixSection(doc: Json): HTMLElement {
    const section = el("section", {
      className: "panel",
      attrs: { "data-section": "time_vs_dose_matrix" },
    });
    section.append(el("h2", { text: "severity correlations: time vs dose" }));
    const matrix = doc.time_vs_dose_matrix;
    if (isErrorDoc(matrix)) {
      section.append(errorRow("time_vs_dose_matrix", matrix));
      return section;
    }
    const rowNames = Object.keys(matrix as Json);
    const colNames = rowNames.length > 0 ? Object.keys((matrix as Json)[rowNames[0]!]) : [];
    const rows = rowNames.map((rn) => {
      const row: (HTMLElement | string)[] = [rn];
      for (const cn of colNames) {
        const cell = (matrix as Json)[rn][cn];
        const pointer = `/time_vs_dose_matrix/${escapePointer(rn)}/${escapePointer(cn)}`;
        if (cell.degenerate) {
          row.push(el("span", { className: "muted", text: "degenerate" }));
        } else {
          row.push(
            el("span", {}, [
              `r=${this.num(`${pointer}/r`)}`,
              el("sup", { text: String(cell.stars) }),
              el("span", { className: "muted", text: ` ${cell.p_display}` }),
            ]),
          );
        }
      }
      return cells(row);
    });
    section.append(table(["cohort slice", ...colNames], rows));
    return section;
  }

  private lmmSection(doc: Json): HTMLElement {
    const section = el("section", {
      className: "panel",
      attrs: { "data-section": "lmm" },
    });
    section.append(el("h2", { text: "random-intercept model" }));
    const lmm = doc.lmm;
    if (isErrorDoc(lmm)) {
      section.append(errorRow("lmm", lmm));
      return section;
    }
    section.append(
      table(
        ["intercept", "slope", "se(slope)", "z", "p", "var(group)", "var(resid)"],
        [
          cells([
            this.num("/lmm/beta0"),
            this.num("/lmm/beta1"),
            this.num("/lmm/se_beta1"),
            this.num("/lmm/z_beta1"),
            this.num("/lmm/p_beta1"),
            this.num("/lmm/sigma2_group"),
            this.num("/lmm/sigma2_resid"),
          ]),
        ],
      ),
      el("p", {
        className: "muted",
        text: `${lmm.converged ? "converged" : "did not converge"} after ${this.num("/lmm/n_iterations")} iterations over ${this.num("/lmm/n_observations")} observations`,
      }),
    );
    return section;
  }

  private lctmSection(doc: Json): HTMLElement {
    const section = el("section", {
      className: "panel",
      attrs: { "data-section": "lctm" },
    });
    section.append(el("h2", { text: "latent trajectory classes" }));
    const lctm = doc.lctm;
    if (isErrorDoc(lctm)) {
      section.append(errorRow("lctm", lctm));
      return section;
    }
    const classes = lctm.classes as Json[];
    const rows = classes.map((c, i) =>
      cells([
        String(i),
        this.num(`/lctm/classes/${i}/weight`),
        this.num(`/lctm/classes/${i}/intercept`),
        this.num(`/lctm/classes/${i}/slope`),
        this.num(`/lctm/classes/${i}/variance`),
        c.degenerate
          ? el("span", { className: "chip chip-sparse", text: "degenerate" })
          : "",
      ]),
    );
    section.append(
      table(["class", "weight", "intercept", "slope", "variance", ""], rows),
      el("p", {
        className: "muted",
        text: `${lctm.converged ? "converged" : "did not converge"} after ${this.num("/lctm/n_iterations")} iterations`,
      }),
    );
    return section;
  }
}
