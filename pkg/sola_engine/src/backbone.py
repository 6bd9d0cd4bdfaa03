"""
SoLA 骨干网络

stem（4×4 patch 投影 + LN + 绝对位置编码）→ 4 个阶段（阶段间 patch merging）→ 最终 LN → 全局平均池化。
每个阶段内的层按模式串依次创建；HSB 在目标 S 层的输入上融合源 L 层的 WKV 输出。
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .bridge import HsbParams, hidden_state_bridge_vjp, hsb_flops, hsb_param_count
from .config import config
from .errors import MergeError, ResolutionError, ShapeError
from .layers.base_layer import HybridLayer, TokenGrid
from .layers.layer_factory import layer_factory
from .numerics import DualValue, LinearProjection, Tensor, as_tensor, layer_norm_vjp, tree_size
from .schedule import NUM_STAGES, BackboneConfig, LayerPos
from .layers.wkv_linear import NORM_MACS

IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class StemParams:
    proj: LinearProjection
    norm_gain: Tensor
    norm_shift: Tensor
    pos_embed: Tensor


@dataclass(frozen=True)
class MergeParams:
    """patch merging：LN(4·C_in) 后接无偏置线性投影 4·C_in → C_out"""

    norm_gain: Tensor
    norm_shift: Tensor
    proj: LinearProjection


@dataclass(frozen=True)
class BackboneParams:
    stem: StemParams
    merges: List[MergeParams]
    stages: List[List[Any]]
    bridges: List[HsbParams]
    final_gain: Tensor
    final_shift: Tensor


@dataclass
class LayerRecord:
    stage: int
    layer: int
    kind: str
    height: int
    width: int
    dim: int
    flops: int


@dataclass
class ForwardTrace:
    """一次前向的记录：逐层类型/形状/乘加数，HSB 源层的隐状态，池化特征"""

    layers: List[LayerRecord] = field(default_factory=list)
    stage_shapes: List[Tuple[int, int, int]] = field(default_factory=list)
    taps: Dict[LayerPos, Tensor] = field(default_factory=dict)
    bridges: List[Dict[str, Any]] = field(default_factory=list)
    pooled: Optional[Tensor] = None

    @property
    def kinds(self) -> List[str]:
        """按阶段拼出实际执行的模式串"""
        out = [""] * NUM_STAGES
        for rec in self.layers:
            out[rec.stage - 1] += rec.kind
        return out

    def to_report(self) -> Dict[str, Any]:
        return {
            "layers": [
                {
                    "stage": r.stage,
                    "layer": r.layer,
                    "kind": r.kind,
                    "shape": [r.height, r.width, r.dim],
                    "flops": r.flops,
                }
                for r in self.layers
            ],
            "stage_shapes": [list(s) for s in self.stage_shapes],
            "taps": {f"{s},{j}": list(t.shape) for (s, j), t in sorted(self.taps.items())},
            "bridges": self.bridges,
            "pooled_dim": None if self.pooled is None else int(self.pooled.shape[0]),
        }


# =============================================================================
# stem 与位置编码
# =============================================================================


def interpolation_matrix(n_out: int, n_in: int) -> Tensor:
    """一维双线性插值矩阵（半像素对齐，边界截断），形状 n_out×n_in"""
    mat = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        mat[i, lo] += 1.0 - frac
        mat[i, hi] += frac
    return mat


def resize_pos_embed(pos_embed: Tensor, height: int, width: int) -> Tensor:
    """把 G×G×C 的位置编码双线性缩放到 height×width×C；尺寸相同时原样返回"""
    gh, gw, _ = pos_embed.shape
    if (gh, gw) == (height, width):
        return pos_embed
    return np.einsum("ia,jb,abc->ijc", interpolation_matrix(height, gh), interpolation_matrix(width, gw), pos_embed)


def _patchify(image: Tensor, patch: int) -> Tensor:
    h, w, c = image.shape
    blocks = image.reshape(h // patch, patch, w // patch, patch, c).transpose(0, 2, 1, 3, 4)
    return blocks.reshape((h // patch) * (w // patch), patch * patch * c)


def _unpatchify(patches: Tensor, h: int, w: int, c: int, patch: int) -> Tensor:
    blocks = patches.reshape(h // patch, w // patch, patch, patch, c).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(h, w, c)


def check_resolution(image: Tensor, patch: int):
    if image.ndim != 3 or image.shape[2] != IMAGE_CHANNELS:
        raise ShapeError(f"输入图像须为 H×W×3，实际为 {image.shape}")
    h, w, _ = image.shape
    if h < patch or w < patch or h % patch or w % patch:
        raise ResolutionError(f"输入分辨率 {h}×{w} 不能被 patch 大小 {patch} 整除")


def patch_embed_vjp(image: Tensor, p: StemParams, patch: int) -> DualValue:
    """4×4 patch 线性投影 → LN → 加位置编码；value 为 TokenGrid"""
    check_resolution(image, patch)
    h, w, c = image.shape
    gh, gw = h // patch, w // patch
    proj = p.proj.apply_vjp(_patchify(image, patch))
    ln = layer_norm_vjp(proj.value, p.norm_gain, p.norm_shift)
    pos = resize_pos_embed(p.pos_embed, gh, gw)
    tokens = ln.value + pos.reshape(gh * gw, -1)
    pg, pw = p.pos_embed.shape[:2]

    def pullback(g: Tensor):
        g_img = g.reshape(gh, gw, -1)
        if (pg, pw) == (gh, gw):
            g_pos = g_img.copy()
        else:
            g_pos = np.einsum("ia,jb,ijc->abc", interpolation_matrix(gh, pg), interpolation_matrix(gw, pw), g_img)
        g_proj, g_gain, g_shift = ln.pullback(g)
        g_patches, g_stem_proj = proj.pullback(g_proj)
        g_image = _unpatchify(g_patches, h, w, c, patch)
        return g_image, StemParams(proj=g_stem_proj, norm_gain=g_gain, norm_shift=g_shift, pos_embed=g_pos)

    return DualValue(TokenGrid(tokens, gh, gw), pullback)


def patch_embed(image: Tensor, p: StemParams, cfg: BackboneConfig) -> TokenGrid:
    return patch_embed_vjp(image, p, cfg.patch_size).value


# =============================================================================
# patch merging
# =============================================================================


def pad_to_even_vjp(grid: TokenGrid) -> DualValue:
    """奇数边长在下方/右侧补零到偶数"""
    h, w = grid.height, grid.width
    ph, pw = h % 2, w % 2
    if not (ph or pw):
        return DualValue(grid, lambda g: (g,))
    padded = np.pad(grid.as_image(), ((0, ph), (0, pw), (0, 0)))

    def pullback(g: Tensor):
        return (g.reshape(h + ph, w + pw, -1)[:h, :w].reshape(h * w, -1),)

    return DualValue(TokenGrid.from_image(padded), pullback)


def patch_merge_vjp(grid: TokenGrid, p: MergeParams) -> DualValue:
    """
    2×2 邻域拼接（Swin 顺序）→ LN → 线性投影。

    Raises:
        MergeError: 网格边长为奇数
    """
    h, w, c = grid.height, grid.width, grid.dim
    if h % 2 or w % 2:
        raise MergeError(f"patch merging 要求偶数边长，实际为 {h}×{w}")
    if p.proj.in_dim != 4 * c:
        raise ShapeError(f"patch merging 投影输入维度 {p.proj.in_dim} 与 4×{c} 不符")
    img = grid.as_image()
    parts = [img[0::2, 0::2], img[1::2, 0::2], img[0::2, 1::2], img[1::2, 1::2]]
    cat = np.concatenate(parts, axis=-1).reshape((h // 2) * (w // 2), 4 * c)
    ln = layer_norm_vjp(cat, p.norm_gain, p.norm_shift)
    proj = p.proj.apply_vjp(ln.value)

    def pullback(g: Tensor):
        g_ln, g_proj = proj.pullback(g)
        g_cat, g_gain, g_shift = ln.pullback(g_ln)
        g_cat = g_cat.reshape(h // 2, w // 2, 4 * c)
        g_img = np.zeros((h, w, c))
        g_img[0::2, 0::2] = g_cat[..., 0:c]
        g_img[1::2, 0::2] = g_cat[..., c : 2 * c]
        g_img[0::2, 1::2] = g_cat[..., 2 * c : 3 * c]
        g_img[1::2, 1::2] = g_cat[..., 3 * c :]
        return g_img.reshape(h * w, c), MergeParams(norm_gain=g_gain, norm_shift=g_shift, proj=g_proj)

    return DualValue(TokenGrid(proj.value, h // 2, w // 2), pullback)


def patch_merge(grid: TokenGrid, p: MergeParams) -> TokenGrid:
    return patch_merge_vjp(grid, p).value


def merge_param_count(in_dim: int, out_dim: int) -> int:
    return 2 * 4 * in_dim + 4 * in_dim * out_dim


def merge_flops(n_out: int, in_dim: int, out_dim: int) -> int:
    return NORM_MACS * n_out * 4 * in_dim + n_out * 4 * in_dim * out_dim


def stem_param_count(cfg: BackboneConfig) -> int:
    patch_dim = cfg.patch_size * cfg.patch_size * IMAGE_CHANNELS
    grid = config.POS_EMBED_GRID
    return patch_dim * cfg.stem_dim + cfg.stem_dim + 2 * cfg.stem_dim + grid * grid * cfg.stem_dim


def stem_flops(cfg: BackboneConfig, n_tokens: int) -> int:
    patch_dim = cfg.patch_size * cfg.patch_size * IMAGE_CHANNELS
    return n_tokens * patch_dim * cfg.stem_dim + NORM_MACS * n_tokens * cfg.stem_dim + n_tokens * cfg.stem_dim


# =============================================================================
# 模型
# =============================================================================


class SolaModel:
    """骨干网络：配置 + 按阶段组织的层对象 + 参数树"""

    def __init__(self, cfg: BackboneConfig, layers: List[List[HybridLayer]], params: BackboneParams):
        self.cfg = cfg
        self.layers = layers
        self.params = params
        self.logger = logging.getLogger(self.__class__.__name__)

    @property
    def active_routes(self):
        return list(self.cfg.hsb_routes) if self.cfg.hsb_enabled else []

    def with_params(self, params: BackboneParams) -> "SolaModel":
        return SolaModel(self.cfg, self.layers, params)

    def num_params(self) -> int:
        return tree_size(self.params)


def build_layers(cfg: BackboneConfig) -> List[List[HybridLayer]]:
    return [layer_factory.create_stage(cfg, s) for s in range(1, NUM_STAGES + 1)]


def build(cfg: BackboneConfig, seed: Optional[int] = None) -> SolaModel:
    """
    按配置和种子初始化模型

    Args:
        cfg: 骨干网络配置（构造时已完成校验）
        seed: 随机种子，默认 config.DEFAULT_SEED

    Returns:
        SolaModel: 初始化好的模型
    """
    seed = config.DEFAULT_SEED if seed is None else seed
    rng = np.random.default_rng(seed)
    layers = build_layers(cfg)

    patch_dim = cfg.patch_size * cfg.patch_size * IMAGE_CHANNELS
    grid = config.POS_EMBED_GRID
    stem = StemParams(
        proj=LinearProjection.init(rng, patch_dim, cfg.stem_dim),
        norm_gain=np.ones(cfg.stem_dim),
        norm_shift=np.zeros(cfg.stem_dim),
        pos_embed=rng.normal(0.0, config.EMBED_INIT_STD, size=(grid, grid, cfg.stem_dim)),
    )
    merges = []
    stages = []
    for s in range(1, NUM_STAGES + 1):
        if s > 1:
            c_in, c_out = cfg.stage_dims[s - 2], cfg.stage_dims[s - 1]
            merges.append(
                MergeParams(
                    norm_gain=np.ones(4 * c_in),
                    norm_shift=np.zeros(4 * c_in),
                    proj=LinearProjection.init(rng, 4 * c_in, c_out, bias=False),
                )
            )
        stages.append([layer.init_params(rng) for layer in layers[s - 1]])
    model_routes = cfg.hsb_routes if cfg.hsb_enabled else []
    bridges = [
        HsbParams.init(rng, route, cfg.stage_dims[route.src[0] - 1], cfg.stage_dims[route.dst[0] - 1])
        for route in model_routes
    ]
    final_dim = cfg.stage_dims[-1]
    params = BackboneParams(
        stem=stem,
        merges=merges,
        stages=stages,
        bridges=bridges,
        final_gain=np.ones(final_dim),
        final_shift=np.zeros(final_dim),
    )
    model = SolaModel(cfg, layers, params)
    logging.info(f"已构建模型 {cfg.name}（种子 {seed}），参数量 {model.num_params():,}")
    return model


def param_table(cfg: BackboneConfig) -> Dict[str, int]:
    """按形状统计各部分参数量，与 build 分配的参数一一对应"""
    layers = build_layers(cfg)
    table = {"stem": stem_param_count(cfg)}
    for s in range(1, NUM_STAGES + 1):
        if s > 1:
            table[f"merge{s}"] = merge_param_count(cfg.stage_dims[s - 2], cfg.stage_dims[s - 1])
        table[f"stage{s}"] = sum(layer.param_count() for layer in layers[s - 1])
    routes = cfg.hsb_routes if cfg.hsb_enabled else []
    table["hsb"] = sum(
        hsb_param_count(cfg.stage_dims[r.src[0] - 1], cfg.stage_dims[r.dst[0] - 1]) for r in routes
    )
    table["final_norm"] = 2 * cfg.stage_dims[-1]
    return table


def flop_table(cfg: BackboneConfig, height: int, width: Optional[int] = None) -> Dict[str, int]:
    """按形状统计各部分乘加数（含按层的 L/S 细分）"""
    layers = build_layers(cfg)
    grids = cfg.stage_grids(height, width)
    table = {"stem": stem_flops(cfg, grids[0][0] * grids[0][1]), "linear": 0, "softmax": 0}
    for s in range(1, NUM_STAGES + 1):
        n = grids[s - 1][0] * grids[s - 1][1]
        if s > 1:
            table[f"merge{s}"] = merge_flops(n, cfg.stage_dims[s - 2], cfg.stage_dims[s - 1])
        for layer in layers[s - 1]:
            key = "linear" if layer.kind == "L" else "softmax"
            table[key] += layer.flops(n)
    routes = cfg.hsb_routes if cfg.hsb_enabled else []
    table["hsb"] = 0
    for r in routes:
        gh, gw = grids[r.dst[0] - 1]
        table["hsb"] += hsb_flops(gh * gw, cfg.stage_dims[r.src[0] - 1], cfg.stage_dims[r.dst[0] - 1])
    n_last = grids[-1][0] * grids[-1][1]
    table["final_norm"] = NORM_MACS * n_last * cfg.stage_dims[-1]
    return table


RouteShape = Tuple[Tuple[int, int], Tuple[int, int]]


def route_shapes(cfg: BackboneConfig, height: int, width: Optional[int] = None) -> List[RouteShape]:
    """每条 HSB 路由的 (源隐状态 N×C, 桥接输出 T_dst×C_dst)，与 ForwardTrace.bridges 一致"""
    grids = cfg.stage_grids(height, width)
    shapes = []
    for r in cfg.hsb_routes:
        (sh, sw), (dh, dw) = grids[r.src[0] - 1], grids[r.dst[0] - 1]
        shapes.append(((sh * sw, cfg.stage_dims[r.src[0] - 1]), (dh * dw, cfg.stage_dims[r.dst[0] - 1])))
    return shapes


# =============================================================================
# 前向与反向
# =============================================================================


def forward_vjp(model: SolaModel, image: Tensor, params: Optional[BackboneParams] = None) -> Tuple[DualValue, ForwardTrace]:
    """
    前向计算，返回 (池化特征的 DualValue, ForwardTrace)。

    pullback(g_pooled) 返回 (g_image, BackboneParams 形状的梯度)。
    """
    cfg = model.cfg
    params = model.params if params is None else params
    image = as_tensor(image, "image")
    trace = ForwardTrace()
    routes = model.active_routes
    incoming: Dict[LayerPos, List[int]] = {}
    for b, route in enumerate(routes):
        incoming.setdefault(tuple(route.dst), []).append(b)
    sources = {tuple(route.src) for route in routes}

    stem = patch_embed_vjp(image, params.stem, cfg.patch_size)
    grid = stem.value
    merge_steps = []
    layer_steps = []
    for s in range(1, NUM_STAGES + 1):
        if s > 1:
            pad = pad_to_even_vjp(grid)
            merge = patch_merge_vjp(pad.value, params.merges[s - 2])
            merge_steps.append((pad, merge))
            grid = merge.value
        trace.stage_shapes.append((grid.height, grid.width, grid.dim))
        stage_steps = []
        for j, layer in enumerate(model.layers[s - 1], start=1):
            tokens = grid.tokens
            bridge_steps = []
            for b in incoming.get((s, j), []):
                route = routes[b]
                bridged = hidden_state_bridge_vjp(trace.taps[tuple(route.src)], tokens, params.bridges[b])
                bridge_steps.append((b, bridged))
                tokens = bridged.value
                trace.bridges.append(
                    {
                        "route": str(route),
                        "src_shape": list(trace.taps[tuple(route.src)].shape),
                        "bridge_shape": list(tokens.shape),
                    }
                )
            step = layer.forward_vjp(params.stages[s - 1][j - 1], grid.with_tokens(tokens))
            if (s, j) in sources:
                trace.taps[(s, j)] = step.value.tap
            trace.layers.append(
                LayerRecord(s, j, layer.kind, grid.height, grid.width, grid.dim, layer.flops(grid.n_tokens))
            )
            stage_steps.append((bridge_steps, step))
            grid = grid.with_tokens(step.value.tokens)
        layer_steps.append(stage_steps)

    final = layer_norm_vjp(grid.tokens, params.final_gain, params.final_shift)
    n_last = grid.n_tokens
    pooled = np.mean(final.value, axis=0)
    trace.pooled = pooled

    def pullback(g_pooled: Tensor):
        g = np.broadcast_to(g_pooled / n_last, final.value.shape).copy()
        g, g_final_gain, g_final_shift = final.pullback(g)
        g_taps: Dict[LayerPos, Tensor] = {}
        g_stages: List[List[Any]] = [[] for _ in range(NUM_STAGES)]
        g_bridges: List[Any] = [None] * len(routes)
        g_merges: List[Any] = [None] * (NUM_STAGES - 1)
        for s in range(NUM_STAGES, 0, -1):
            stage_grads = []
            for j in range(len(layer_steps[s - 1]), 0, -1):
                bridge_steps, step = layer_steps[s - 1][j - 1]
                g, g_layer = step.pullback(g, g_taps.pop((s, j), None))
                stage_grads.append(g_layer)
                for b, bridged in reversed(bridge_steps):
                    g_src, g, g_bridge = bridged.pullback(g)
                    src = tuple(routes[b].src)
                    g_taps[src] = g_src if src not in g_taps else g_taps[src] + g_src
                    g_bridges[b] = g_bridge
            g_stages[s - 1] = list(reversed(stage_grads))
            if s > 1:
                pad, merge = merge_steps[s - 2]
                g, g_merges[s - 2] = merge.pullback(g)
                (g,) = pad.pullback(g)
        g_image, g_stem = stem.pullback(g)
        grads = BackboneParams(
            stem=g_stem,
            merges=g_merges,
            stages=g_stages,
            bridges=g_bridges,
            final_gain=g_final_gain,
            final_shift=g_final_shift,
        )
        return g_image, grads

    return DualValue(pooled, pullback), trace


def forward(model: SolaModel, image: Tensor) -> ForwardTrace:
    """前向计算，返回包含各层形状、HSB 隐状态和池化特征的 ForwardTrace"""
    _, trace = forward_vjp(model, image)
    model.logger.debug(f"前向完成: 阶段形状 {trace.stage_shapes}")
    return trace
