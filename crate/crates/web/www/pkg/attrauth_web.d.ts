/* tslint:disable */
/* eslint-disable */

/**
 * Battery life at `steps` evenly spaced authentication ratios in [0, 1].
 */
export function battery_curve(capacity_wh: number, p_n: number, p_d: number, beta: number, steps: number): Float64Array;

/**
 * Battery life in hours, NaN for invalid inputs.
 */
export function battery_hours(capacity_wh: number, p_n: number, p_d: number, alpha: number, beta: number): number;

/**
 * Plants `subspaces` random `dim`-dimensional subspaces in R^`ambient`,
 * draws `per` noisy points from each and clusters them.
 */
export function cluster_demo(subspaces: number, dim: number, ambient: number, per: number, noise: number, seed: number): string;

/**
 * ROC curve and EER of unit-variance Gaussian genuine scores centred at
 * `separation` against impostor scores centred at 0.
 */
export function roc_demo(separation: number, genuine: number, impostor: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly battery_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly battery_hours: (a: number, b: number, c: number, d: number, e: number) => number;
    readonly cluster_demo: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly roc_demo: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
