import { describe, expect, it } from "vitest";

import {
  DecisionFormState,
  decisionBody,
  editorOptions,
  emptyForm,
  withConflict,
  withSuggestion,
} from "../src/decision.js";

const SCHEMA: Record<string, boolean> = {
  pasc_score: false,
  sex: true,
  race_ethnicity: true,
  vaccine_dose: false,
  weekly_steps: false,
};

describe("editorOptions", () => {
  it("offers only unprotected features not already included", () => {
    const opts = editorOptions(SCHEMA, ["pasc_score", "weekly_steps"]);
    expect(opts.addable).toEqual(["vaccine_dose"]);
    expect(opts.removable).toEqual(["weekly_steps"]);
  });

  it("never offers protected groups on either side", () => {
    const opts = editorOptions(SCHEMA, ["pasc_score"]);
    expect(opts.addable).not.toContain("sex");
    expect(opts.addable).not.toContain("race_ethnicity");
    // even a subset that somehow contains one is not offered back
    const tainted = editorOptions(SCHEMA, ["pasc_score", "sex"]);
    expect(tainted.removable).toEqual([]);
  });

  it("keeps the severity score out of the removable list", () => {
    const opts = editorOptions(SCHEMA, ["pasc_score", "vaccine_dose"]);
    expect(opts.removable).toEqual(["vaccine_dose"]);
  });
});

describe("withSuggestion", () => {
  it("switches to edit_subset and toggles the suggested name", () => {
    let form = withSuggestion(emptyForm(), "add", "vaccine_dose");
    expect(form.kind).toBe("edit_subset");
    expect(form.add).toEqual(["vaccine_dose"]);
    form = withSuggestion(form, "add", "vaccine_dose");
    expect(form.add).toEqual([]);
  });

  it("keeps unrelated form content", () => {
    const typed: DecisionFormState = {
      ...emptyForm(),
      statement: "draft text",
      remove: ["weekly_steps"],
    };
    const next = withSuggestion(typed, "remove", "heart_rate");
    expect(next.statement).toBe("draft text");
    expect(next.remove).toEqual(["weekly_steps", "heart_rate"]);
  });
});

describe("decisionBody", () => {
  it("serializes approve and abort without extras", () => {
    expect(decisionBody(emptyForm())).toEqual({
      body: { action: "approve_convergence" },
    });
    expect(decisionBody({ ...emptyForm(), kind: "abort" })).toEqual({
      body: { action: "abort" },
    });
  });

  it("requires a statement and focal feature to revise", () => {
    const base: DecisionFormState = { ...emptyForm(), kind: "revise" };
    expect("error" in decisionBody(base)).toBe(true);
    expect("error" in decisionBody({ ...base, statement: "   " })).toBe(true);
    expect(
      "error" in decisionBody({ ...base, statement: "x", focalFeature: "" }),
    ).toBe(true);
    expect(
      decisionBody({
        ...base,
        statement: "Severity declines with dose count.",
        focalFeature: "vaccine_dose",
      }),
    ).toEqual({
      body: {
        action: "revise",
        statement: "Severity declines with dose count.",
        focal_feature: "vaccine_dose",
      },
    });
  });

  it("requires at least one feature change for edit_subset", () => {
    const base: DecisionFormState = { ...emptyForm(), kind: "edit_subset" };
    expect("error" in decisionBody(base)).toBe(true);
    expect(decisionBody({ ...base, add: ["vaccine_dose"] })).toEqual({
      body: { action: "edit_subset", add: ["vaccine_dose"], remove: [] },
    });
  });
});

describe("withConflict", () => {
  it("keeps the typed fields and clears busy", () => {
    const form: DecisionFormState = {
      kind: "revise",
      statement: "draft",
      focalFeature: "time",
      add: [],
      remove: [],
      conflict: null,
      busy: true,
    };
    const next = withConflict(form, "wrong_state: snapshot is stale");
    expect(next.statement).toBe("draft");
    expect(next.focalFeature).toBe("time");
    expect(next.conflict).toContain("wrong_state");
    expect(next.busy).toBe(false);
  });
});
