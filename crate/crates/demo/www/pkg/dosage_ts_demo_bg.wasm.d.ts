/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_dosageGrid: (a: number) => [number, number, number, number];
export const demo_etaCurve: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_gammaGrid: (a: number) => [number, number];
export const demo_new: (a: number) => [number, number, number];
export const demo_participants: (a: number) => number;
export const demo_runEpisode: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const demo_selectionCurve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
