/** Decision form state and its pure transitions.
 *
 * The form never loses what the analyst typed: a conflict (stale ETag,
 * state change) only sets the conflict banner. Submissions serialize
 * through the busy flag; views disable the submit button while it is
 * set.
 */

import { DecisionBody } from "./api.js";

export type DecisionKind =
  | "approve_convergence"
  | "revise"
  | "edit_subset"
  | "abort";

export const DECISION_KINDS: readonly DecisionKind[] = [
  "approve_convergence",
  "revise",
  "edit_subset",
  "abort",
];

export interface DecisionFormState {
  kind: DecisionKind;
  statement: string;
  focalFeature: string;
  add: string[];
  remove: string[];
  conflict: string | null;
  busy: boolean;
}

export function emptyForm(): DecisionFormState {
  return {
    kind: "approve_convergence",
    statement: "",
    focalFeature: "",
    add: [],
    remove: [],
    conflict: null,
    busy: false,
  };
}

function toggle(list: string[], name: string): string[] {
  return list.includes(name)
    ? list.filter((n) => n !== name)
    : [...list, name];
}

/** A suggestion chip click: switch to edit_subset and toggle the name. */
export function withSuggestion(
  form: DecisionFormState,
  side: "add" | "remove",
  name: string,
): DecisionFormState {
  const next = { ...form, kind: "edit_subset" as DecisionKind };
  if (side === "add") next.add = toggle(form.add, name);
  else next.remove = toggle(form.remove, name);
  return next;
}

export interface EditorOptions {
  addable: string[];
  removable: string[];
}

/** Feature names the subset editor may offer.
 *
 * Protected groups are excluded outright; they must never appear as
 * options. The severity score cannot be removed (the engine refuses),
 * so it is not offered either.
 */
export function editorOptions(
  schema: Record<string, boolean>,
  subset: string[],
): EditorOptions {
  const addable = Object.keys(schema)
    .filter((name) => !schema[name] && !subset.includes(name))
    .sort();
  const removable = subset.filter(
    (name) => name !== "pasc_score" && !schema[name],
  );
  return { addable, removable };
}

/** Serialize the form, or explain why it cannot be submitted yet. */
export function decisionBody(
  form: DecisionFormState,
): { body: DecisionBody } | { error: string } {
  switch (form.kind) {
    case "approve_convergence":
    case "abort":
      return { body: { action: form.kind } };
    case "revise": {
      if (!form.statement.trim()) {
        return { error: "a revised hypothesis needs a statement" };
      }
      if (!form.focalFeature.trim()) {
        return { error: "a revised hypothesis needs a focal feature" };
      }
      return {
        body: {
          action: "revise",
          statement: form.statement,
          focal_feature: form.focalFeature,
        },
      };
    }
    case "edit_subset": {
      if (form.add.length === 0 && form.remove.length === 0) {
        return { error: "pick at least one feature to add or remove" };
      }
      return {
        body: { action: "edit_subset", add: form.add, remove: form.remove },
      };
    }
  }
}

/** Record a rejected submission without touching what was typed. */
export function withConflict(
  form: DecisionFormState,
  message: string,
): DecisionFormState {
  return { ...form, conflict: message, busy: false };
}
