/**
 * Issue workbench: the metadata form planners fill in before planning.
 *
 * Client-side validation mirrors the server invariants so obviously bad
 * input never leaves the browser; a valid save PUTs the metadata, which
 * re-plans the issue server-side, and the fresh plan set is fetched back
 * (state always comes from the server, never from a local cache).
 */

import { ApiClient, ApiError, newRequestId } from "./api";
import type { MetaUpdate, PlanSetDoc } from "./types";
import { validateMetaDraft, type FieldErrors, type MetaDraft } from "./validate";

export interface WorkbenchState {
  draft: MetaDraft;
  fieldErrors: FieldErrors;
  saving: boolean;
  manifestHash?: string;
  plans?: PlanSetDoc;
  lastError?: string;
}

export class IssueWorkbench {
  readonly state: WorkbenchState;

  constructor(
    private readonly api: ApiClient,
    private readonly title: string,
    private readonly issue: string,
  ) {
    this.state = {
      draft: { references: [] },
      fieldErrors: {},
      saving: false,
    };
  }

  edit(patch: Partial<MetaDraft>): void {
    Object.assign(this.state.draft, patch);
    this.state.fieldErrors = validateMetaDraft(this.state.draft);
  }

  /**
   * Validate, PUT the metadata, refetch plans.  Returns true when the save
   * went through.  Invalid drafts produce inline errors and no request.
   */
  async save(): Promise<boolean> {
    const errors = validateMetaDraft(this.state.draft);
    this.state.fieldErrors = errors;
    if (Object.keys(errors).length > 0) {
      return false;
    }
    const draft = this.state.draft;
    const update: MetaUpdate = { request_id: newRequestId() };
    if (draft.price !== undefined && draft.price !== "") {
      update.price = Number(draft.price);
    }
    if (draft.n_total !== undefined && draft.n_total !== "") {
      update.n_total = Number(draft.n_total);
    }
    if (draft.delta !== undefined && draft.delta !== "") {
      update.delta = Number(draft.delta);
    }
    if (draft.references.length > 0) {
      update.references = draft.references;
    }
    if (draft.extra_product_id !== undefined) {
      update.extra_product_id = draft.extra_product_id || null;
    }
    this.state.saving = true;
    try {
      const result = await this.api.putMeta(this.title, this.issue, update);
      this.state.manifestHash = result.manifest_hash;
      this.state.plans = await this.api.getPlans(this.title, this.issue);
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        this.state.fieldErrors = err.fieldErrors;
      } else {
        this.state.lastError = err instanceof Error ? err.message : String(err);
      }
      return false;
    } finally {
      this.state.saving = false;
    }
  }
}
