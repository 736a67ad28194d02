/**
 * Client-side mirror of the service invariants.
 *
 * The point is to reject bad input before any request leaves the browser;
 * the server re-validates everything, and 422 responses map back onto the
 * same field keys these checks produce.
 */

import type { Adjustment, FieldErrorDetail } from "./types";

export type FieldErrors = Record<string, string>;

export interface MetaDraft {
  price?: string;
  n_total?: string;
  delta?: string;
  references: [string, string][];
  extra_product_id?: string;
}

export function validateMetaDraft(draft: MetaDraft): FieldErrors {
  const errors: FieldErrors = {};
  if (draft.references.length !== 0 && draft.references.length !== 2) {
    errors["references"] = "choose exactly 0 or 2 reference issues";
  }
  if (draft.price !== undefined && draft.price !== "") {
    const price = Number(draft.price);
    if (!Number.isFinite(price) || price <= 0) {
      errors["price"] = "price must be a positive number";
    }
  }
  const nTotal = draft.n_total === undefined || draft.n_total === ""
    ? undefined : Number(draft.n_total);
  const delta = draft.delta === undefined || draft.delta === ""
    ? undefined : Number(draft.delta);
  if (nTotal !== undefined && (!Number.isInteger(nTotal) || nTotal <= 0)) {
    errors["n_total"] = "total supply constraint must be a positive integer";
  }
  if (delta !== undefined) {
    if (!Number.isInteger(delta) || delta < 0) {
      errors["delta"] = "tolerance must be a non-negative integer";
    } else if (nTotal !== undefined && delta > nTotal) {
      errors["delta"] = "tolerance cannot exceed the total supply constraint";
    }
  }
  return errors;
}

export function validateAdjustments(adjustments: Adjustment[]): FieldErrors {
  const errors: FieldErrors = {};
  adjustments.forEach((adj, k) => {
    if (!Number.isInteger(adj.supply) || adj.supply < 0) {
      errors[`adjustments.${k}.supply`] = "adjusted supply must be >= 0";
    }
    if (!adj.reason.trim()) {
      errors[`adjustments.${k}.reason`] = "a reason is required for manual edits";
    }
    if (!adj.pos) {
      errors[`adjustments.${k}.pos`] = "missing POS id";
    }
  });
  return errors;
}

/** Flatten a FastAPI 422 detail array into field -> message. */
export function parse422(detail: FieldErrorDetail[]): FieldErrors {
  const errors: FieldErrors = {};
  for (const entry of detail) {
    const path = entry.loc.filter((part) => part !== "body").join(".");
    errors[path || "_"] = entry.msg;
  }
  return errors;
}
