/* tslint:disable */
/* eslint-disable */

export class WorldDemo {
    free(): void;
    [Symbol.dispose](): void;
    add_obstacle(x: number, y: number, r: number): void;
    /**
     * A walled 8 m arena with ten random circular obstacles, none closer
     * than the reflex distance to the start.
     */
    constructor(seed: number);
    set_reflex(enabled: boolean): void;
    /**
     * Pose, obstacles, lidar rays, trail and counters as JSON.
     */
    state(): string;
    /**
     * Advances `n` ticks of 0.1 s with a constant full-speed forward
     * command and returns the state as JSON.
     */
    step(n: number): string;
}

export function osc_encode(address: string, text: string): string;

/**
 * Moisture sampled once a minute for `minutes`, with `liters` of water
 * added at minute `water_at_min` (negative for none). Returns
 * `[[minute, moisture], …]` as JSON.
 */
export function soil_curve(initial: number, decay_per_min: number, minutes: number, water_at_min: number, liters: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_worlddemo_free: (a: number, b: number) => void;
    readonly osc_encode: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly soil_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly worlddemo_add_obstacle: (a: number, b: number, c: number, d: number) => void;
    readonly worlddemo_new: (a: number) => number;
    readonly worlddemo_set_reflex: (a: number, b: number) => void;
    readonly worlddemo_state: (a: number) => [number, number];
    readonly worlddemo_step: (a: number, b: number) => [number, number];
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
