/**
 * Browser bootstrap: wires the controllers to a plain DOM.
 *
 * Deliberately thin; all decision logic lives in the controllers so the
 * test suite can drive them against a stub server without a browser.
 */

import { ApiClient, ApiError } from "./api";
import { frontierChart, salesHistoryChart } from "./chart";
import { PlanReview } from "./planreview";
import type { IssueSummary, PlanDoc } from "./types";
import { IssueWorkbench } from "./workbench";

function el<T extends HTMLElement = HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function renderErrors(container: HTMLElement, errors: Record<string, string>): void {
  container.innerHTML = "";
  for (const [fieldName, message] of Object.entries(errors)) {
    const line = document.createElement("div");
    line.className = "field-error";
    line.dataset.field = fieldName;
    line.textContent = `${fieldName}: ${message}`;
    container.appendChild(line);
  }
}

function renderPlanCard(plan: PlanDoc): string {
  const k = plan.kpis_forecast;
  return `<div class="plan-card" data-label="${plan.label}">
    <h3>${plan.label}</h3>
    <dl>
      <dt>total supply</dt><dd>${plan.total_supply}</dd>
      <dt>forecast profit</dt><dd>${k.profit}</dd>
      <dt>forecast OOS</dt><dd>${k.oos_count}</dd>
      <dt>scenario</dt><dd>${plan.scenario.join(" / ")}</dd>
    </dl>
  </div>`;
}

async function start(): Promise<void> {
  const token = window.localStorage.getItem("plateopt_token") ?? undefined;
  const api = new ApiClient({ baseUrl: "", token });
  try {
    await api.health();
  } catch (err) {
    if (err instanceof ApiError && err.status === 401) {
      const entered = window.prompt("API token required:") ?? "";
      window.localStorage.setItem("plateopt_token", entered);
      window.location.reload();
      return;
    }
    throw err;
  }

  const issues = await api.listIssues();
  const select = el<HTMLSelectElement>("issue-select");
  select.innerHTML = issues.map((issue: IssueSummary) =>
    `<option value="${issue.title}|${issue.issue}">` +
    `${issue.title} / ${issue.issue} (${issue.status})</option>`).join("");

  async function openIssue(title: string, issue: string): Promise<void> {
    const actor = window.localStorage.getItem("plateopt_actor") ?? "planner";
    const workbench = new IssueWorkbench(api, title, issue);
    const review = new PlanReview(api, title, issue, actor);
    await review.load();

    const stats = await api.getStats(title, issue);
    el("sales-chart").innerHTML = salesHistoryChart(stats.series);
    const plans = review.state.plans;
    if (plans) {
      el("frontier-chart").innerHTML = frontierChart(plans.scenario_frontier);
      el("plan-cards").innerHTML =
        renderPlanCard(plans.optimal_supply) +
        renderPlanCard(plans.optimal_distribution);
      el("manifest").textContent = `plan manifest ${plans.manifest_hash}`;
    }

    el<HTMLButtonElement>("meta-save").onclick = async () => {
      workbench.edit({
        price: el<HTMLInputElement>("meta-price").value,
        n_total: el<HTMLInputElement>("meta-ntotal").value,
        delta: el<HTMLInputElement>("meta-delta").value,
      });
      const saved = await workbench.save();
      renderErrors(el("meta-errors"), workbench.state.fieldErrors);
      if (saved) await openIssue(title, issue);
    };

    el<HTMLButtonElement>("submit-selection").onclick = async () => {
      const ok = await review.submit();
      renderErrors(el("selection-errors"), review.state.fieldErrors);
      if (ok && review.state.submitted) {
        el("selection-status").textContent =
          `recorded: ${review.state.submitted.label} by ${review.state.submitted.actor}`;
      }
    };
  }

  select.onchange = () => {
    const [title, issue] = select.value.split("|");
    if (title && issue) void openIssue(title, issue);
  };
  if (issues.length > 0) {
    const first = issues[0];
    if (first) await openIssue(first.title, first.issue);
  }
}

void start();
