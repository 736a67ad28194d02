/**
 * Plan review: compare the generated plans, edit per-POS supplies, submit.
 *
 * Submission discipline is the whole game here:
 *  - one request id per draft, minted when editing starts, so a double
 *    click (or a retry after a network blip) can never double-log;
 *  - an in-flight guard so concurrent submits collapse into one;
 *  - a 409 (same id, divergent body: some other tab burned it) triggers a
 *    refresh-and-retry with a fresh id;
 *  - after any outcome the submitted state is refetched from the server,
 *    never trusted from local memory.
 */

import { ApiClient, ApiError, newRequestId } from "./api";
import type { Adjustment, PlanSetDoc, Selection, SelectionRecord } from "./types";
import { validateAdjustments, type FieldErrors } from "./validate";

export type PlanLabel = Selection["label"];

export interface PlanReviewState {
  plans?: PlanSetDoc;
  chosen: PlanLabel;
  adjustments: Map<string, { supply: number; reason: string }>;
  fieldErrors: FieldErrors;
  submitting: boolean;
  submitted?: SelectionRecord;
  lastError?: string;
}

export class PlanReview {
  readonly state: PlanReviewState;
  private draftRequestId: string;

  constructor(
    private readonly api: ApiClient,
    private readonly title: string,
    private readonly issue: string,
    private readonly actor: string,
  ) {
    this.state = {
      chosen: "optimal_supply",
      adjustments: new Map(),
      fieldErrors: {},
      submitting: false,
    };
    this.draftRequestId = newRequestId();
  }

  async load(): Promise<void> {
    this.state.plans = await this.api.getPlans(this.title, this.issue);
  }

  choose(label: PlanLabel): void {
    this.state.chosen = label;
  }

  /** Record a per-POS supply edit; editing invalidates nothing server-side
   * until submit, but edits require a reason. */
  editPos(pos: string, supply: number, reason: string): void {
    const base = this.basePlanAllocations();
    if (base !== undefined && base[pos] === supply) {
      this.state.adjustments.delete(pos);  // back to the plan value
    } else {
      this.state.adjustments.set(pos, { supply, reason });
    }
    this.state.fieldErrors = validateAdjustments(this.adjustmentList());
  }

  basePlanAllocations(): Record<string, number> | undefined {
    if (!this.state.plans) return undefined;
    return this.state.chosen === "optimal_distribution"
      ? this.state.plans.optimal_distribution.allocations
      : this.state.plans.optimal_supply.allocations;
  }

  adjustmentList(): Adjustment[] {
    return [...this.state.adjustments.entries()]
      .sort(([a], [b]) => (a < b ? -1 : 1))
      .map(([pos, edit]) => ({ pos, supply: edit.supply, reason: edit.reason }));
  }

  /**
   * Submit the selection.  Duplicate invocations while a submit is in
   * flight resolve to the same single outcome.
   */
  async submit(): Promise<boolean> {
    if (this.state.submitting) {
      return false;  // in-flight guard: the first click wins
    }
    const adjustments = this.adjustmentList();
    const errors = validateAdjustments(adjustments);
    this.state.fieldErrors = errors;
    if (Object.keys(errors).length > 0) {
      return false;
    }
    const selection: Selection = {
      request_id: this.draftRequestId,
      label: this.state.chosen,
      adjustments,
      actor: this.actor,
    };
    this.state.submitting = true;
    try {
      return await this.trySubmit(selection, true);
    } finally {
      this.state.submitting = false;
    }
  }

  private async trySubmit(selection: Selection, mayRetry: boolean): Promise<boolean> {
    try {
      await this.api.postSelection(this.title, this.issue, selection);
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        this.state.fieldErrors = err.fieldErrors;
        return false;
      }
      if (err instanceof ApiError && err.status === 409 && mayRetry) {
        // someone burned this id: refresh plans, retry once with a new id
        await this.load();
        const retry: Selection = { ...selection, request_id: newRequestId() };
        this.draftRequestId = retry.request_id;
        return this.trySubmit(retry, false);
      }
      this.state.lastError = err instanceof Error ? err.message : String(err);
      return false;
    }
    // submitted state renders from the audit log, not from local memory
    this.state.submitted = await this.api.getSelection(this.title, this.issue);
    this.state.adjustments.clear();
    this.draftRequestId = newRequestId();
    return true;
  }
}
