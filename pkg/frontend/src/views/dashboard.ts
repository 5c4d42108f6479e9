/** Run dashboard route: status, lineage, timeline, evidence, decisions.
 *
 * One poll loop owns all freshness; a 304 leaves the DOM untouched, so
 * typed form state survives polling. Decision submissions hold the
 * ETag of the snapshot being looked at; a stale submission surfaces
 * the conflict, keeps the form content, and refreshes the snapshot for
 * the next attempt.
 */

import {
  ApiClient,
  ApiError,
  HypothesisView,
  IterationView,
  RunSnapshot,
} from "../api.js";
import {
  DECISION_KINDS,
  DecisionFormState,
  DecisionKind,
  decisionBody,
  editorOptions,
  emptyForm,
  withConflict,
  withSuggestion,
} from "../decision.js";
import { PollController, startPoll } from "../poll.js";
import { hashFor } from "../router.js";
import { renderIteration } from "./evidence.js";
import { clear, el, statusBadge } from "./helpers.js";

export class DashboardView {
  private snapshot: RunSnapshot | null = null;
  private etag = "";
  private selected: number | null;
  private readonly records = new Map<number, IterationView>();
  private form: DecisionFormState = emptyForm();
  private poll: PollController | null = null;

  private readonly banner = el("div", {
    className: "banner banner-offline hidden",
    text: "connection lost; retrying",
  });
  private readonly headerBox = el("div", { className: "run-header" });
  private readonly lineageBox = el("div", { className: "panel" });
  private readonly subsetBox = el("div", { className: "panel" });
  private readonly timelineBox = el("div", { className: "panel" });
  private readonly evidenceBox = el("div", { className: "panel" });
  private readonly decisionBox = el("div", { className: "panel" });

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly win: Window,
    readonly runId: string,
    iteration: number | null,
    private readonly pollIntervalMs = 1500,
  ) {
    this.selected = iteration;
  }

  mount(): void {
    clear(this.root);
    this.root.append(
      this.banner,
      this.headerBox,
      el("div", { className: "columns" }, [
        el("div", { className: "col" }, [
          this.lineageBox,
          this.subsetBox,
          this.decisionBox,
        ]),
        el("div", { className: "col col-wide" }, [
          this.timelineBox,
          this.evidenceBox,
        ]),
      ]),
    );
    this.poll = startPoll(
      () => this.tick(),
      (offline) => this.banner.classList.toggle("hidden", !offline),
      this.pollIntervalMs,
    );
  }

  dispose(): void {
    this.poll?.stop();
  }

  /** Timeline navigation within the same run re-uses the mounted view. */
  setIteration(iteration: number | null): void {
    this.selected = iteration;
    void this.ensureRecord().then(() => {
      this.renderTimeline();
      this.renderEvidence();
    });
  }

  private currentIndex(): number | null {
    if (this.selected !== null) return this.selected;
    const n = this.snapshot?.n_iterations ?? 0;
    return n > 0 ? n - 1 : null;
  }

  private async ensureRecord(): Promise<void> {
    const idx = this.currentIndex();
    const n = this.snapshot?.n_iterations ?? 0;
    if (idx === null || this.records.has(idx)) return;
    if (idx >= n) return; // out of range renders as inline not-found
    this.records.set(idx, await this.api.getIteration(this.runId, idx));
  }

  private async tick(): Promise<void> {
    let changed: boolean;
    try {
      const { snapshot, etag } = await this.api.getRun(this.runId);
      changed = etag !== this.etag;
      this.snapshot = snapshot;
      this.etag = etag;
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.win.location.hash = hashFor({ name: "list" });
        return;
      }
      throw err;
    }
    const before = this.records.size;
    await this.ensureRecord();
    if (changed) {
      this.renderHeader();
      this.renderLineage();
      this.renderSubset();
      this.renderTimeline();
      this.renderEvidence();
      this.renderDecision();
    } else if (this.records.size !== before) {
      this.renderTimeline();
      this.renderEvidence();
    }
  }

  private renderHeader(): void {
    const s = this.snapshot;
    if (!s) return;
    clear(this.headerBox);
    const nav: (HTMLElement | string)[] = [
      el("a", { text: "all runs", attrs: { href: hashFor({ name: "list" }) } }),
    ];
    if (s.has_final_stats) {
      nav.push(
        el("a", {
          className: "stats-link",
          text: "stats report",
          attrs: { href: hashFor({ name: "stats", runId: s.run_id }) },
        }),
      );
    }
    this.headerBox.append(
      el("header", {}, [
        el("h1", { text: s.run_id }),
        statusBadge(s.status),
        el("span", { className: "poll-dot", attrs: { title: "polling" } }),
        el("nav", { className: "run-nav" }, nav),
      ]),
    );
  }

  private renderLineage(): void {
    const s = this.snapshot;
    if (!s) return;
    clear(this.lineageBox);
    this.lineageBox.append(el("h2", { text: "hypothesis lineage" }));
    const byParent = new Map<string | null, HypothesisView[]>();
    const known = new Set(s.hypotheses.map((h) => h.id));
    for (const h of s.hypotheses) {
      const parent = h.parent_id !== null && known.has(h.parent_id) ? h.parent_id : null;
      const bucket = byParent.get(parent) ?? [];
      bucket.push(h);
      byParent.set(parent, bucket);
    }
    const renderNodes = (parent: string | null): HTMLElement | null => {
      const nodes = byParent.get(parent) ?? [];
      if (nodes.length === 0) return null;
      const items = nodes.map((h) => {
        const li = el("li", { attrs: { "data-hypothesis": h.id } }, [
          el("span", { className: `chip chip-${h.status}`, text: h.status }),
          el("strong", { text: ` ${h.id} ` }),
          el("span", { className: "statement", text: h.statement }),
          el("span", { className: "muted", text: ` (focal: ${h.focal_feature})` }),
        ]);
        if (h.revision_reason) {
          li.append(el("div", { className: "muted", text: h.revision_reason }));
        }
        const children = renderNodes(h.id);
        if (children) li.append(children);
        return li;
      });
      return el("ul", { className: "lineage" }, items);
    };
    const tree = renderNodes(null);
    this.lineageBox.append(tree ?? el("p", { className: "empty", text: "no hypotheses" }));
  }

  private renderSubset(): void {
    const s = this.snapshot;
    if (!s) return;
    clear(this.subsetBox);
    this.subsetBox.append(el("h2", { text: "feature subset" }));
    this.subsetBox.append(
      el(
        "div",
        { className: "subset", attrs: { "data-subset": s.subset.included.join(",") } },
        s.subset.included.map((name) =>
          el("span", { className: "chip chip-feature", text: name }),
        ),
      ),
    );
    if (s.subset.rationale) {
      this.subsetBox.append(el("p", { className: "muted", text: s.subset.rationale }));
    }
  }

  private renderTimeline(): void {
    const s = this.snapshot;
    if (!s) return;
    clear(this.timelineBox);
    this.timelineBox.append(el("h2", { text: "iterations" }));
    const current = this.currentIndex();
    const chips: HTMLElement[] = [];
    for (let i = 0; i < s.n_iterations; i += 1) {
      const decision = this.records.get(i)?.decision;
      chips.push(
        el("button", {
          className: i === current ? "chip chip-iter selected" : "chip chip-iter",
          text: decision ? `#${i} ${decision}` : `#${i}`,
          attrs: { type: "button", "data-timeline": String(i) },
          on: {
            click: () => {
              this.win.location.hash = hashFor({
                name: "run",
                runId: this.runId,
                iteration: i,
              });
            },
          },
        }),
      );
    }
    if (s.status !== "running" && s.status !== "awaiting_human") {
      chips.push(statusBadge(s.status));
      if (s.has_final_stats) {
        chips.push(
          el("a", {
            className: "stats-link",
            text: "stats report",
            attrs: { href: hashFor({ name: "stats", runId: s.run_id }) },
          }),
        );
      }
    }
    this.timelineBox.append(el("div", { className: "timeline" }, chips));
  }

  private renderEvidence(): void {
    const s = this.snapshot;
    clear(this.evidenceBox);
    const idx = this.currentIndex();
    if (!s || idx === null) {
      this.evidenceBox.append(
        el("p", { className: "empty", text: "no iterations yet" }),
      );
      return;
    }
    if (idx >= s.n_iterations) {
      this.evidenceBox.append(
        el("p", { className: "banner banner-error", text: `iteration ${idx} not found` }),
      );
      return;
    }
    const record = this.records.get(idx);
    if (!record) {
      this.evidenceBox.append(el("p", { className: "empty", text: "loading iteration" }));
      return;
    }
    this.evidenceBox.append(
      renderIteration(record, (side, name) => {
        this.form = withSuggestion(this.form, side, name);
        this.renderDecision();
      }),
    );
  }

  private setKind(kind: DecisionKind): void {
    this.form = { ...this.form, kind };
    this.renderDecision();
  }

  private renderDecision(): void {
    const s = this.snapshot;
    clear(this.decisionBox);
    if (!s) return;
    this.decisionBox.append(el("h2", { text: "decision" }));
    const awaiting = s.status === "awaiting_human";

    if (!awaiting) {
      const hint =
        s.status === "running"
          ? "run is processing; decisions open when it parks"
          : `run is ${s.status}; decisions are closed`;
      this.decisionBox.append(el("p", { className: "muted", text: hint }));
    }

    if (this.form.conflict) {
      this.decisionBox.append(
        el("div", {
          className: "banner banner-conflict",
          text: this.form.conflict,
          attrs: { "data-conflict": "1" },
        }),
      );
    }

    const fieldset = el("fieldset");
    fieldset.disabled = !awaiting || this.form.busy;

    const kindSelect = el("select", { attrs: { name: "kind" } });
    for (const kind of DECISION_KINDS) {
      const option = el("option", { text: kind, attrs: { value: kind } });
      if (kind === this.form.kind) option.selected = true;
      kindSelect.append(option);
    }
    kindSelect.addEventListener("change", () => {
      this.setKind(kindSelect.value as DecisionKind);
    });
    fieldset.append(el("label", { text: "action " }, [kindSelect]));

    if (this.form.kind === "revise") {
      const statement = el("textarea", {
        attrs: { name: "statement", rows: "3", placeholder: "revised hypothesis statement" },
      });
      statement.value = this.form.statement;
      statement.addEventListener("input", () => {
        this.form = { ...this.form, statement: statement.value };
      });
      const focal = el("select", { attrs: { name: "focal" } });
      const names = Object.keys(s.schema)
        .filter((name) => !s.schema[name])
        .sort();
      if (!names.includes("time")) names.push("time");
      focal.append(el("option", { text: "focal feature", attrs: { value: "" } }));
      for (const name of names) {
        const option = el("option", { text: name, attrs: { value: name } });
        if (name === this.form.focalFeature) option.selected = true;
        focal.append(option);
      }
      focal.addEventListener("change", () => {
        this.form = { ...this.form, focalFeature: focal.value };
      });
      fieldset.append(
        el("label", { text: "statement " }, [statement]),
        el("label", { text: "focal " }, [focal]),
      );
    }

    if (this.form.kind === "edit_subset") {
      const options = editorOptions(s.schema, s.subset.included);
      const addSelect = el("select", {
        attrs: { name: "add", multiple: "", size: "4" },
      });
      for (const name of options.addable) {
        const option = el("option", { text: name, attrs: { value: name } });
        if (this.form.add.includes(name)) option.selected = true;
        addSelect.append(option);
      }
      addSelect.addEventListener("change", () => {
        this.form = {
          ...this.form,
          add: Array.from(addSelect.selectedOptions, (o) => o.value),
        };
      });
      const removeSelect = el("select", {
        attrs: { name: "remove", multiple: "", size: "4" },
      });
      for (const name of options.removable) {
        const option = el("option", { text: name, attrs: { value: name } });
        if (this.form.remove.includes(name)) option.selected = true;
        removeSelect.append(option);
      }
      removeSelect.addEventListener("change", () => {
        this.form = {
          ...this.form,
          remove: Array.from(removeSelect.selectedOptions, (o) => o.value),
        };
      });
      fieldset.append(
        el("label", { text: "add features " }, [addSelect]),
        el("label", { text: "remove features " }, [removeSelect]),
      );
    }

    const submit = el("button", {
      className: "submit",
      text: "submit decision",
      attrs: { type: "submit" },
    });
    submit.disabled = this.form.busy;
    fieldset.append(submit);

    const form = el("form", { className: "decision" }, [fieldset]);
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.submit();
    });
    this.decisionBox.append(form);
  }

  private async submit(): Promise<void> {
    if (this.form.busy) return;
    const out = decisionBody(this.form);
    if ("error" in out) {
      this.form = withConflict(this.form, out.error);
      this.renderDecision();
      return;
    }
    this.form = { ...this.form, busy: true, conflict: null };
    this.renderDecision();
    try {
      await this.api.decide(this.runId, out.body, this.etag);
      this.form = emptyForm();
    } catch (err) {
      if (err instanceof ApiError) {
        this.form = withConflict(this.form, `${err.code}: ${err.message}`);
      } else {
        this.form = withConflict(this.form, "connection lost; try again");
      }
    }
    this.renderDecision();
    // pick up the post-decision snapshot (or the fresh one a conflict
    // means we were missing) right away
    this.poll?.kick();
  }
}
