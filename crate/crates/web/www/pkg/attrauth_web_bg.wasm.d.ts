/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const battery_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const battery_hours: (a: number, b: number, c: number, d: number, e: number) => number;
export const cluster_demo: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const roc_demo: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
