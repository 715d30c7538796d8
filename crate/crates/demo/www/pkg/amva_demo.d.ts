/* tslint:disable */
/* eslint-disable */

/**
 * An RGBA image plus a text summary.
 */
export class View {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    height(): number;
    rgba(): Uint8Array;
    text(): string;
    width(): number;
}

export function colorbar(name: string, width: number): View;

export function ercView(noise: number, target_fmr: number, seed: bigint): View;

export function scorecamView(channels: number, size: number, seed: bigint): View;

export function statsView(images: number, size: number, high_utility: number, low_utility: number, seed: bigint): View;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_view_free: (a: number, b: number) => void;
    readonly colorbar: (a: number, b: number, c: number) => [number, number, number];
    readonly ercView: (a: number, b: number, c: bigint) => [number, number, number];
    readonly scorecamView: (a: number, b: number, c: bigint) => [number, number, number];
    readonly statsView: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
    readonly view_height: (a: number) => number;
    readonly view_rgba: (a: number) => [number, number];
    readonly view_text: (a: number) => [number, number];
    readonly view_width: (a: number) => number;
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
