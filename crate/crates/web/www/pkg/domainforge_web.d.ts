/* tslint:disable */
/* eslint-disable */

/**
 * Returns a JSON-encoded [`BleuView`].
 */
export function bleuBreakdown(hypotheses: string, references: string, max_n: number): string;

/**
 * Returns a JSON-encoded [`BpeView`].
 */
export function bpeSegment(corpus: string, vocab_limit: number, text: string): string;

/**
 * Returns a JSON-encoded [`KMeansView`].
 */
export function kmeans(points: Float64Array, k: number, seed: number, restarts: number): string;

export function sampleBlobs(k: number, per_cluster: number, spread: number, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly bleuBreakdown: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly bpeSegment: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly kmeans: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly sampleBlobs: (a: number, b: number, c: number, d: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
