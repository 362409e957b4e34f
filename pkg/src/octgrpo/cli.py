"""``octgrpo`` command-line entry point.

Exit codes: 0 on success, 1 on a domain error (bad file, failed critic, ...),
2 on a usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codec import (
    decode_latent,
    grid_to_tokens,
    morton_decode,
    morton_encode,
    read_tokens,
    tokens_to_grid,
    ungroup,
    write_tokens,
)
from .config import (
    RunConfig,
    build_stack,
    hparam_snapshot,
    load_config,
    load_templates,
    with_paper_hparams,
)
from .critics import Artifact, physical_terms
from .errors import OctGrpoError
from .geometry import extract_surface, read_obj, write_obj
from .grpo import decode_rollout, policy_shape_for, train
from .policy import PolicyParams, load_params, sample_sequence, save_params, split_tokens
from .shapes import KINDS, ShapeSpec, corpus_specs, gen_primitive
from .voxel import iou, read_grid, write_grid
from .vq import dequantize, quantize, read_codebook, train_kmeans, write_codebook


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_gen_shape(a):
    params = json.loads(a.params) if a.params else {}
    if not isinstance(params, dict):
        raise OctGrpoError("--params must be a JSON object")
    grid = gen_primitive(ShapeSpec(a.kind, params, a.seed), (a.dims,) * 3)
    write_grid(a.out, grid)
    print(f"{a.kind}: {grid.count} cells -> {a.out}")


def cmd_encode(a):
    seq = grid_to_tokens(read_grid(a.grid), a.depth)
    write_tokens(a.out, seq)
    print(f"{seq.length} tokens of width {seq.width} -> {a.out}")


def cmd_decode(a):
    seq, vocab = read_tokens(a.tokens)
    if vocab:
        if a.codebook is None:
            raise OctGrpoError("index tokens need --codebook")
        seq = dequantize(seq, read_codebook(a.codebook))
    grid = tokens_to_grid(seq)
    write_grid(a.out, grid)
    print(f"{grid.count} cells -> {a.out}")


def cmd_train_codebook(a):
    if a.grids:
        grids = [read_grid(p) for p in a.grids]
    else:
        grids = [gen_primitive(s) for s in corpus_specs(a.corpus, a.seed)]
    data = np.concatenate([grid_to_tokens(g, a.depth).features for g in grids])
    history: list = []
    cb = train_kmeans(data, a.k, a.iters, a.seed, history)
    write_codebook(a.out, cb)
    idx = quantize(grid_to_tokens(grids[0], a.depth), cb).indices
    _emit({"k": cb.size, "dim": cb.dim, "samples": len(data), "distortion": history,
           "out": str(a.out), "first_shape_codes_used": int(len(np.unique(idx)))})


def cmd_tokenize(a):
    cb = read_codebook(a.codebook)
    seq = quantize(grid_to_tokens(read_grid(a.grid), a.depth), cb)
    write_tokens(a.out, seq, vocab=cb.size)
    print(f"{seq.length} indices (K={cb.size}) -> {a.out}")


def cmd_detokenize(a):
    seq, vocab = read_tokens(a.tokens)
    if not vocab:
        raise OctGrpoError(f"{a.tokens} holds features, not codebook indices")
    cb = read_codebook(a.codebook)
    if vocab != cb.size:
        raise OctGrpoError(f"token vocab {vocab} != codebook size {cb.size}")
    grid = decode_latent(ungroup(dequantize(seq, cb)))
    write_grid(a.out, grid)
    msg = f"{grid.count} cells -> {a.out}"
    if a.reference:
        msg += f"\nIoU {iou(grid, read_grid(a.reference)):.6f}"
    print(msg)


def cmd_mesh(a):
    mesh = extract_surface(read_grid(a.grid))
    write_obj(a.out, mesh)
    print(f"{len(mesh.vertices)} vertices, {mesh.n_faces} faces -> {a.out}")


def cmd_score(a):
    if (a.grid is None) == (a.mesh is None):
        raise OctGrpoError("give exactly one of --grid or --mesh")
    cfg = load_config(a.config) if a.config else RunConfig()
    grid = read_grid(a.grid) if a.grid else None
    art = Artifact(grid, a.prompt_id, read_obj(a.mesh) if a.mesh else None)
    stack = build_stack(cfg)
    try:
        out = stack.evaluate(art).as_dict()
        if art.mesh.n_faces:
            out.update(zip(("r_stab", "r_rig", "r_int"), physical_terms(art.mesh, grid.cell_size if grid else 1 / 64)))
    finally:
        stack.close()
    _emit(out)


def _resolve_run_config(a) -> RunConfig:
    cfg = load_config(a.config) if a.config else RunConfig()
    if a.paper_hparams:
        cfg = with_paper_hparams(cfg)
    if a.seed is not None:
        cfg = cfg.model_copy(update={"seed": a.seed})
    return cfg


def cmd_train(a):
    cfg = _resolve_run_config(a)
    out = Path(a.out)
    if a.dry_run:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.model_dump_json(indent=2))
        _emit(hparam_snapshot(cfg))
        return
    if cfg.codebook is None:
        raise OctGrpoError("config needs a codebook path for training")
    cb = read_codebook(cfg.codebook)
    templates = load_templates(cfg)
    prompts = sorted(templates) or [0]
    gcfg = cfg.grpo()
    shape = policy_shape_for(cb, cfg.depth, max(prompts) + 1, cfg.policy.n_sem, cfg.policy.n_sem_vocab,
                             cfg.policy.width, cfg.policy.window)
    seed = cfg.seed if cfg.policy.seed is None else cfg.policy.seed
    params = PolicyParams.init(shape, seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.model_dump_json(indent=2))
    stack = build_stack(cfg, templates)
    try:
        state = train(gcfg, stack, cb, cfg.depth, prompts, params=params, log_path=out / "log.csv")
    finally:
        stack.close()
    save_params(out / "policy.crpp", state.params)
    last = state.log[-1]
    _emit({"steps": state.step, "skipped_updates": state.skipped, "final_reward": last["reward"],
           "final_kl": last["kl"], "checkpoint": str(out / "policy.crpp"), "log": str(out / "log.csv")})


def cmd_sample(a):
    params = load_params(a.checkpoint)
    cb = read_codebook(a.codebook)
    s = params.shape
    depth = {8**d: d for d in (1, 2, 3, 4)}.get(s.n_geo)
    if depth is None or s.n_geo_vocab != cb.size:
        raise OctGrpoError("checkpoint does not match the codebook")
    ro = sample_sequence(params, a.prompt_id, a.temperature, a.seed)
    grid = decode_rollout(s, ro.tokens, cb, depth)
    write_grid(a.out, grid)
    if a.tokens_out:
        write_tokens(a.tokens_out, dequantize(split_tokens(s, ro.tokens)[1], cb, depth), vocab=cb.size)
    _emit({"semantic": [int(t) for t in split_tokens(s, ro.tokens)[0]], "logp": float(ro.logp_old.sum()),
           "cells": grid.count, "out": str(a.out)})


def cmd_morton(a):
    if a.check:
        n = a.side**3
        codes = np.arange(n)
        x, y, z = morton_decode(codes, a.side)
        if not np.array_equal(morton_encode(x, y, z, a.side), codes):
            raise OctGrpoError("Morton encode/decode is not a bijection")
        if len(set(zip(x.tolist(), y.tolist(), z.tolist()))) != n:
            raise OctGrpoError("Morton decode is not injective")
        print(f"bijection ok {n}")
    elif a.code is not None:
        x, y, z = morton_decode(a.code, a.side)
        print(f"{int(x)} {int(y)} {int(z)}")
    elif a.xyz is not None:
        print(int(morton_encode(*a.xyz, side=a.side)))
    else:
        raise OctGrpoError("morton needs --check, --code or --xyz")


def cmd_version(a):
    print(__version__)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="octgrpo", description="Voxel octant tokens, critics and group-relative training.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-shape", help="write a procedural shape as a voxel grid")
    s.add_argument("--kind", required=True, choices=KINDS)
    s.add_argument("--params", help="JSON object of shape parameters")
    s.add_argument("--dims", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_shape)

    s = sub.add_parser("encode", help="grid -> continuous octant tokens")
    s.add_argument("--grid", required=True)
    s.add_argument("--depth", type=int, default=3)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_encode)

    s = sub.add_parser("decode", help="octant tokens -> grid")
    s.add_argument("--tokens", required=True)
    s.add_argument("--codebook")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_decode)

    s = sub.add_parser("train-codebook", help="k-means codebook over octant tokens")
    s.add_argument("--grids", nargs="+", help="training grids; default is a generated corpus")
    s.add_argument("--corpus", type=int, default=64, help="size of the generated corpus")
    s.add_argument("--depth", type=int, default=3)
    s.add_argument("--k", type=int, default=256)
    s.add_argument("--iters", type=int, default=20)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_codebook)

    s = sub.add_parser("tokenize", help="grid -> codebook indices")
    s.add_argument("--grid", required=True)
    s.add_argument("--codebook", required=True)
    s.add_argument("--depth", type=int, default=3)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_tokenize)

    s = sub.add_parser("detokenize", help="codebook indices -> grid")
    s.add_argument("--tokens", required=True)
    s.add_argument("--codebook", required=True)
    s.add_argument("--reference", help="grid to report IoU against")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_detokenize)

    s = sub.add_parser("mesh", help="grid -> OBJ surface")
    s.add_argument("--grid", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_mesh)

    s = sub.add_parser("score", help="score a grid or mesh with a critic stack")
    s.add_argument("--grid")
    s.add_argument("--mesh", "--obj", dest="mesh")
    s.add_argument("--config", "--critics", dest="config")
    s.add_argument("--prompt-id", type=int, default=0)
    s.set_defaults(fn=cmd_score)

    s = sub.add_parser("train", help="group-relative policy training")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--paper-hparams", action="store_true", help="use the full-scale hyperparameters")
    s.add_argument("--seed", type=int)
    s.add_argument("--dry-run", action="store_true", help="write the resolved config and exit")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="sample a shape from a trained policy")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--codebook", required=True)
    s.add_argument("--prompt-id", type=int, default=0)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--tokens-out")
    s.set_defaults(fn=cmd_sample)

    s = sub.add_parser("morton", help="Morton code utilities")
    s.add_argument("--side", type=int, default=8)
    s.add_argument("--check", action="store_true")
    s.add_argument("--code", type=int)
    s.add_argument("--xyz", type=int, nargs=3)
    s.set_defaults(fn=cmd_morton)

    s = sub.add_parser("version")
    s.set_defaults(fn=cmd_version)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.fn(args)
    except (OctGrpoError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
