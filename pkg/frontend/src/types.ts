/**
 * Payload types of the planner service API.
 * Mirrors the server's OpenAPI contract; the service is the source of truth.
 */

export interface IssueSummary {
  title: string;
  issue: string;
  period_start: string;
  period_end: string;
  price: string;
  n_total: number;
  delta: number;
  status: "planned" | "unplanned" | "selected";
}

export interface KpisDoc {
  total_supply: number;
  revenue: string;
  cost: string;
  profit: string;
  oos_count: number;
  sellthrough_rate: number;
}

export interface PlanDoc {
  label: string;
  title: string;
  issue: string;
  scenario: number[];
  allocations: Record<string, number>;
  total_supply: number;
  kpis_forecast: KpisDoc;
  annotations: string[];
}

export interface ScenarioScoreDoc {
  scenario: number[];
  kpis: KpisDoc;
  reference_kpis: KpisDoc;
}

export interface PlanSetDoc {
  optimal_supply: PlanDoc;
  optimal_distribution: PlanDoc;
  scenario_frontier: ScenarioScoreDoc[];
  constraint_status: "met" | "unmet_all";
  manifest_hash: string;
}

export interface StatsPoint {
  issue: string;
  period_start: string;
  total_supply: number;
  total_sales: number;
  sellthrough_rate: number;
  profit: string;
  oos_count: number;
}

export interface StatsDoc {
  title: string;
  series: StatsPoint[];
}

export interface MetaUpdate {
  request_id: string;
  price?: number;
  extra_product_id?: string | null;
  references?: [string, string][];
  atypical_exclusions?: [string, string][];
  n_total?: number;
  delta?: number;
}

export interface Adjustment {
  pos: string;
  supply: number;
  reason: string;
}

export interface Selection {
  request_id: string;
  label: "optimal_supply" | "optimal_distribution" | "manual";
  adjustments: Adjustment[];
  actor: string;
}

export interface SelectionRecord {
  kind: "selection";
  title: string;
  issue: string;
  label: string;
  adjustments: Adjustment[];
  actor: string;
  request_id: string;
}

/** One entry of a FastAPI-style 422 detail array. */
export interface FieldErrorDetail {
  loc: (string | number)[];
  msg: string;
  type: string;
}
