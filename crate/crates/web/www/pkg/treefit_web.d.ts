/* tslint:disable */
/* eslint-disable */

/**
 * A generated problem with its ground truth and a current state the page
 * can pose by hand or fit.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Median time of `repeats` direction computations per backend at the
     * current state, and the largest relative difference between the two
     * directions. JSON.
     */
    compare(repeats: number): string;
    /**
     * Fit from the current state; returns the report as JSON.
     */
    fit(solver: string, max_iters: number): string;
    /**
     * Start over from the truth with every joint turned by up to `max_angle`.
     */
    jitter(max_angle: number, seed: number): void;
    /**
     * Pixel coordinates `[u0, v0, u1, v1, …]` of the part origins of the
     * current state (or of the truth).
     */
    joint_pixels(truth: boolean): Float64Array;
    /**
     * Pixel coordinates of every keypoint, in the order of the model.
     */
    keypoint_pixels(truth: boolean): Float64Array;
    /**
     * `topology` is one of `smpl_like_23`, `smplh_like_51`, `chain`, `random_tree`.
     */
    constructor(topology: string, joints: number, shape_params: number, measurements: number, noise_3d: number, seed: number);
    /**
     * Parent of every part, `-1` for the root.
     */
    parents(): Int32Array;
    /**
     * Set joint `i` (1-based) to the rotation vector `(x, y, z)`.
     */
    set_joint(i: number, x: number, y: number, z: number): void;
    readonly joints: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_compare: (a: number, b: number) => [number, number, number, number];
    readonly demo_fit: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_jitter: (a: number, b: number, c: number) => void;
    readonly demo_joint_pixels: (a: number, b: number) => [number, number];
    readonly demo_joints: (a: number) => number;
    readonly demo_keypoint_pixels: (a: number, b: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly demo_parents: (a: number) => [number, number];
    readonly demo_set_joint: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
