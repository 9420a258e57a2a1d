/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    dosageGrid(): Float64Array;
    etaCurve(gamma: number, burden: number): Float64Array;
    /**
     * Discount rates an episode can be run at.
     */
    gammaGrid(): Float64Array;
    constructor(seed: number);
    participants(): number;
    /**
     * JSON-encoded [`EpisodeView`].
     */
    runEpisode(participant: number, gamma: number, w: number, seed: number): string;
    selectionCurve(gamma: number, burden: number, effect_mean: number, effect_sd: number): Float64Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_dosageGrid: (a: number) => [number, number, number, number];
    readonly demo_etaCurve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_gammaGrid: (a: number) => [number, number];
    readonly demo_new: (a: number) => [number, number, number];
    readonly demo_participants: (a: number) => number;
    readonly demo_runEpisode: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly demo_selectionCurve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
