/**
 * Typed client for the planner service.
 *
 * Every mutating call carries a client request id, so retries are safe: the
 * server replays the stored response for a repeated id and 409s if the same
 * id arrives with a different body.
 */

import type {
  FieldErrorDetail,
  IssueSummary,
  MetaUpdate,
  PlanSetDoc,
  Selection,
  SelectionRecord,
  StatsDoc,
} from "./types";
import { parse422, type FieldErrors } from "./validate";

export class ApiError extends Error {
  readonly status: number;
  readonly fieldErrors: FieldErrors;

  constructor(status: number, message: string, fieldErrors: FieldErrors = {}) {
    super(message);
    this.status = status;
    this.fieldErrors = fieldErrors;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ApiClientOptions {
  baseUrl: string;
  token?: string;
  fetchImpl?: FetchLike;
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly token?: string;
  private readonly fetchImpl: FetchLike;

  constructor(options: ApiClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/$/, "");
    this.token = options.token;
    this.fetchImpl = options.fetchImpl ?? fetch.bind(globalThis);
  }

  private headers(withBody: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    if (withBody) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(body !== undefined),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (response.ok) {
      return (await response.json()) as T;
    }
    let detail: unknown = undefined;
    try {
      detail = (await response.json()).detail;
    } catch {
      // non-JSON error body; fall through with empty detail
    }
    if (response.status === 422 && Array.isArray(detail)) {
      throw new ApiError(422, "validation failed",
        parse422(detail as FieldErrorDetail[]));
    }
    const message = typeof detail === "string" ? detail : response.statusText;
    throw new ApiError(response.status, message || `HTTP ${response.status}`);
  }

  health(): Promise<{ status: string; manifest: string }> {
    return this.request("GET", "/health");
  }

  listIssues(): Promise<IssueSummary[]> {
    return this.request("GET", "/issues");
  }

  getPlans(title: string, issue: string): Promise<PlanSetDoc> {
    return this.request("GET", `/issues/${enc(title)}/${enc(issue)}/plans`);
  }

  getStats(title: string, issue: string): Promise<StatsDoc> {
    return this.request("GET", `/issues/${enc(title)}/${enc(issue)}/stats`);
  }

  putMeta(title: string, issue: string, update: MetaUpdate): Promise<{
    status: string;
    manifest_hash: string;
  }> {
    return this.request("PUT", `/issues/${enc(title)}/${enc(issue)}/meta`, update);
  }

  postSelection(title: string, issue: string, selection: Selection): Promise<{
    status: string;
  }> {
    return this.request("POST",
      `/issues/${enc(title)}/${enc(issue)}/selection`, selection);
  }

  getSelection(title: string, issue: string): Promise<SelectionRecord> {
    return this.request("GET", `/issues/${enc(title)}/${enc(issue)}/selection`);
  }
}

function enc(part: string): string {
  return encodeURIComponent(part);
}

let counter = 0;

/** Request ids: UUID when available, else a monotonically unique fallback. */
export function newRequestId(): string {
  const cryptoObj = (globalThis as { crypto?: Crypto }).crypto;
  if (cryptoObj?.randomUUID) {
    return cryptoObj.randomUUID();
  }
  counter += 1;
  return `req-${Date.now()}-${counter}`;
}
