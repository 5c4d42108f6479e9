/** Evidence panel: one iteration record, rendered as the judge saw it.
 *
 * Excerpt text, verdicts, feature names, and the raw response are
 * inserted as text content exactly as the API sent them. Sparklines
 * come from the record's embedded excerpt rows, never from a fresh
 * cohort query.
 */

import { IterationView, ReportView } from "../api.js";
import { sparklineGeometry } from "../sparkline.js";
import { el, statusBadge, svgSparkline } from "./helpers.js";

const VERDICT_CLASSES: Record<string, string> = {
  Aligned: "chip chip-aligned",
  NotAligned: "chip chip-notaligned",
  Inconclusive: "chip chip-inconclusive",
};

export type SuggestionHandler = (side: "add" | "remove", name: string) => void;

function participantSparkline(
  record: IterationView,
  pid: string,
): HTMLElement | null {
  const series = record.excerpts[pid];
  if (!series || series.length === 0) return null;
  const geometry = sparklineGeometry(series);
  if (!geometry) return null;
  return el("span", { className: "trajectory", attrs: { "data-pid": pid } }, [
    el("span", { className: "pid", text: pid }),
    svgSparkline(geometry),
  ]);
}

function reportCard(
  record: IterationView,
  report: ReportView,
  slot: number,
  onSuggestion: SuggestionHandler,
): HTMLElement {
  const card = el("article", {
    className: "report",
    attrs: { "data-report": String(slot) },
  });
  card.append(
    el("div", { className: "report-head" }, [
      el("span", {
        className: VERDICT_CLASSES[report.verdict] ?? "chip",
        text: report.verdict,
        attrs: { "data-verdict": report.verdict },
      }),
      el("span", { className: "muted", text: `batch ${slot}` }),
    ]),
  );

  if (report.evidence.length > 0) {
    const items = report.evidence.map((item) => {
      const sparks = item.participant_ids
        .map((pid) => participantSparkline(record, pid))
        .filter((n): n is HTMLElement => n !== null);
      return el("li", {}, [
        el("span", { className: "excerpt", text: item.excerpt }),
        el("span", { className: "sparks" }, sparks),
      ]);
    });
    card.append(el("ul", { className: "evidence" }, items));
  }

  const chips: HTMLElement[] = [];
  for (const name of report.suggested_additions) {
    chips.push(
      el("button", {
        className: "chip chip-add",
        text: `+ ${name}`,
        attrs: { type: "button", "data-suggest-add": name },
        on: { click: () => onSuggestion("add", name) },
      }),
    );
  }
  for (const name of report.suggested_removals) {
    chips.push(
      el("button", {
        className: "chip chip-remove",
        text: `- ${name}`,
        attrs: { type: "button", "data-suggest-remove": name },
        on: { click: () => onSuggestion("remove", name) },
      }),
    );
  }
  for (const name of report.unknown_suggestions) {
    chips.push(
      el("span", { className: "chip chip-unknown", text: `? ${name}` }),
    );
  }
  if (chips.length > 0) {
    card.append(el("div", { className: "suggestions" }, chips));
  }

  const details = el("details", { className: "raw" }, [
    el("summary", { text: "raw response" }),
    el("pre", { text: report.raw_response }),
  ]);
  // an unparseable response is the interesting part: show it unfolded
  if (report.verdict === "Inconclusive") details.setAttribute("open", "");
  card.append(details);
  return card;
}

export function renderIteration(
  record: IterationView,
  onSuggestion: SuggestionHandler,
): HTMLElement {
  const panel = el("section", {
    className: "iteration",
    attrs: { "data-iteration": String(record.index) },
  });
  panel.append(
    el("div", { className: "iteration-head" }, [
      el("h3", { text: `iteration ${record.index}` }),
      statusBadge(record.decision),
      el("span", { className: "muted", text: `decided by ${record.decided_by}` }),
    ]),
  );
  if (record.error) {
    panel.append(
      el("div", { className: "banner banner-error", text: record.error }),
    );
  }
  panel.append(
    el("p", { className: "muted" }, [
      `judged against: ${record.subset.included.join(", ")}`,
      el("br"),
      `left for next iteration: ${record.subset_after.included.join(", ")}`,
    ]),
  );
  record.reports.forEach((report, slot) => {
    panel.append(reportCard(record, report, slot, onSuggestion));
  });
  if (record.reports.length === 0 && !record.error) {
    panel.append(el("p", { className: "empty", text: "no reports recorded" }));
  }
  return panel;
}
