// Deployment-mode gates: which controls exist, straight from /api/meta.

import type { Meta } from "./types.js";

export interface ModeGates {
  canMutate: boolean;          // create configs/tasks, trigger evaluations
  canCreateAnalysis: boolean;
  banner: string | null;       // shown when something is locked down
}

export function modeGates(meta: Pick<Meta, "mode" | "no_new_analysis">): ModeGates {
  const readOnly = meta.mode === "view_only";
  const canCreateAnalysis = !meta.no_new_analysis;
  let banner: string | null = null;
  if (readOnly && !canCreateAnalysis) {
    banner = "Archive deployment: browsing only, analysis creation disabled.";
  } else if (readOnly) {
    banner = "View-only deployment: results are browsable and new analyses " +
      "can be created, but configurations and runs cannot be changed.";
  } else if (!canCreateAnalysis) {
    banner = "Analysis creation is disabled on this deployment.";
  }
  return { canMutate: !readOnly, canCreateAnalysis, banner };
}

/** Disable every element marked data-requires="mutation"/"analysis". */
export function applyGates(root: ParentNode, gates: ModeGates): void {
  for (const el of root.querySelectorAll<HTMLElement>("[data-requires]")) {
    const need = el.dataset.requires;
    const allowed =
      need === "mutation" ? gates.canMutate :
      need === "analysis" ? gates.canCreateAnalysis : true;
    if (el instanceof HTMLButtonElement || el instanceof HTMLInputElement ||
        el instanceof HTMLSelectElement || el instanceof HTMLTextAreaElement) {
      el.disabled = !allowed;
    }
    el.classList.toggle("locked", !allowed);
    if (!allowed) el.setAttribute("title", "not available in this deployment mode");
  }
}
