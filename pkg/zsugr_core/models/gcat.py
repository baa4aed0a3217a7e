"""
Трансформер GCAT (Gated Cross-Attention Transformer).

Энкодер выполняет self-attention над токенами бэкбона (V_b + позиционное кодирование),
двухветвевой декодер уточняет их перекрёстным вниманием к токенам V_c,
гейты (свёртка 1×1 + активация) взвешивают обе ветви, а FFN и усреднение по токенам
дают вектор признаков жеста O_T размерности d.

Цепочка форм (по умолчанию): (256,7,7) → 49×256 → 49×768 → (каждый блок) 49×768 → FFN → 49×512 → 512.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import torch
import torch.nn as nn

from ..config import GcatSettings, ProviderSettings
from ..errors import ConfigError, NumericalError

ACTIVATIONS = {
    "gelu": nn.GELU,
    "elu": nn.ELU,
    "relu": nn.ReLU,
    "sigmoid": nn.Sigmoid,
    "silu": nn.SiLU,
}


def sinusoidal_position_embedding(channels: int, height: int, width: int) -> torch.Tensor:
    """
    Фиксированное двумерное синусоидальное позиционное кодирование формы C×H×W.
    Первая половина каналов кодирует строку, вторая - столбец; значения лежат в [−1, 1].
    """
    if channels % 4 != 0:
        raise ConfigError(f"число каналов позиционного кодирования {channels} должно делиться на 4")
    half = channels // 2
    dim_t = 10000.0 ** (2 * (torch.arange(half) // 2).float() / half)
    y = torch.arange(height).float()[:, None] / dim_t             # H×half
    x = torch.arange(width).float()[:, None] / dim_t              # W×half
    pos_y = torch.stack((y[:, 0::2].sin(), y[:, 1::2].cos()), dim=-1).flatten(1)
    pos_x = torch.stack((x[:, 0::2].sin(), x[:, 1::2].cos()), dim=-1).flatten(1)
    grid = torch.cat(
        (pos_y[:, None, :].expand(height, width, half), pos_x[None, :, :].expand(height, width, half)),
        dim=-1,
    )
    return grid.permute(2, 0, 1).contiguous()


@dataclass
class EncoderState:
    """Выход энкодера O_e: B × (H′W′) × C′."""

    tokens: torch.Tensor


@dataclass
class BlockTrace:
    """Промежуточные тензоры блока декодера: нормированные ветви, гейт и веса внимания по головам."""

    a_left: torch.Tensor
    a_right: torch.Tensor
    gate: Optional[torch.Tensor]
    attn_left: torch.Tensor        # B × heads × T × T (запросы O_e, ключи V_c)
    attn_right: torch.Tensor       # B × heads × T × T (запросы V_c, ключи O_e)


@dataclass
class DecoderOutput:
    """Признак жеста (B × d), токены до усреднения (B × T × d) и трассы всех блоков."""

    features: torch.Tensor
    tokens: torch.Tensor
    traces: List[BlockTrace] = field(default_factory=list)


def _expect(tensor: torch.Tensor, shape: Tuple[int, ...], where: str) -> None:
    """Проверка формы на границе модуля (размер батча не проверяется)."""
    if tuple(tensor.shape[1:]) != tuple(shape):
        raise ConfigError(f"{where}: форма {tuple(tensor.shape[1:])} вместо {tuple(shape)}")


class GatedCrossAttentionBlock(nn.Module):
    """
    Один блок декодера.
    Левая ветвь: Q = O_e, K = V = V_c. Правая ветвь: Q = V_c, K = V = O_e.
    A_L = LN(Q_L + CrossAtt), A_R = LN(Q_R + CrossAtt); гейты g(A_L), g(A_R) уменьшают
    каналы вдвое и конкатенируются в мультипликативный гейт для O_e.
    """

    def __init__(
        self,
        channels: int,
        heads: int,
        ffn_dim: int,
        dropout: float,
        activation: str,
        fusion: str = "gated",
        out_dim: Optional[int] = None,
    ):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ConfigError(f"неизвестная активация гейта {activation!r}")
        self.fusion = fusion
        self.final = out_dim is not None
        self.left = nn.MultiheadAttention(channels, heads, dropout=dropout, batch_first=True)
        self.right = nn.MultiheadAttention(channels, heads, dropout=dropout, batch_first=True)
        self.norm_left = nn.LayerNorm(channels)
        self.norm_right = nn.LayerNorm(channels)
        # Свёртки 1×1 по каналам: C″ → C″/2 в каждой ветви
        self.gate_left = nn.Conv1d(channels, channels // 2, kernel_size=1)
        self.gate_right = nn.Conv1d(channels, channels // 2, kernel_size=1)
        self.activation = ACTIVATIONS[activation]()
        # Промежуточные блоки: FFN C″→C″ с остаточной связью; последний: выходная голова C″→d
        self.ffn = nn.Sequential(
            nn.Linear(channels, ffn_dim),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(ffn_dim, out_dim if self.final else channels),
        )

    def _gate_branch(self, conv: nn.Conv1d, branch: torch.Tensor) -> torch.Tensor:
        return self.activation(conv(branch.transpose(1, 2)).transpose(1, 2))

    def gate(self, a_left: torch.Tensor, a_right: torch.Tensor) -> torch.Tensor:
        """Конкатенация g(A_L) и g(A_R): B × T × C″."""
        return torch.cat((self._gate_branch(self.gate_left, a_left), self._gate_branch(self.gate_right, a_right)), dim=-1)

    def forward(self, o_e: torch.Tensor, v_c: torch.Tensor) -> Tuple[torch.Tensor, BlockTrace]:
        att_left, w_left = self.left(o_e, v_c, v_c, need_weights=True, average_attn_weights=False)
        a_left = self.norm_left(o_e + att_left)
        att_right, w_right = self.right(v_c, o_e, o_e, need_weights=True, average_attn_weights=False)
        a_right = self.norm_right(v_c + att_right)

        gate: Optional[torch.Tensor] = None
        if self.fusion == "gated":
            gate = self.gate(a_left, a_right)
            fused = o_e * gate
        else:
            fused = o_e * (a_left + a_right)

        out = self.ffn(fused) if self.final else fused + self.ffn(fused)
        return out, BlockTrace(a_left=a_left, a_right=a_right, gate=gate, attn_left=w_left, attn_right=w_right)


class GatedCrossAttentionTransformer(nn.Module):
    """
    Полная модель GCAT с поддержкой абляций:
        full          - энкодер + декодер (основной вариант);
        encoder_only  - усреднённые проецированные токены энкодера (декодер отключён);
        backbone_only - усреднённые по пространству признаки бэкбона (GCAT отключён, обучаемых параметров нет).
    """

    def __init__(
        self,
        backbone_channels: int = 256,
        grid: Tuple[int, int] = (7, 7),
        clip_channels: int = 768,
        feature_dim: int = 512,
        encoder_layers: int = 3,
        decoder_layers: int = 3,
        heads: int = 8,
        encoder_ffn_dim: int = 1024,
        decoder_ffn_dim: int = 1536,
        dropout: float = 0.1,
        gate_activation: str = "gelu",
        fusion: str = "gated",
        ablation: str = "full",
    ):
        super().__init__()
        self.backbone_channels = backbone_channels
        self.grid = tuple(grid)
        self.clip_channels = clip_channels
        self.ablation = ablation
        self.n_tokens = self.grid[0] * self.grid[1]
        self.feature_dim = backbone_channels if ablation == "backbone_only" else feature_dim

        self.register_buffer(
            "position", sinusoidal_position_embedding(backbone_channels, *self.grid), persistent=False
        )
        self.encoder: Optional[nn.TransformerEncoder] = None
        self.encoder_head: Optional[nn.Linear] = None
        self.projection: Optional[nn.Linear] = None
        self.blocks = nn.ModuleList()

        if ablation != "backbone_only":
            layer = nn.TransformerEncoderLayer(
                d_model=backbone_channels,
                nhead=heads,
                dim_feedforward=encoder_ffn_dim,
                dropout=dropout,
                batch_first=True,
            )
            self.encoder = nn.TransformerEncoder(layer, num_layers=encoder_layers, enable_nested_tensor=False)
        if ablation == "encoder_only":
            self.encoder_head = nn.Linear(backbone_channels, feature_dim)
        if ablation == "full":
            # Проекция выхода энкодера в размерность токенов V_c перед первым блоком
            self.projection = nn.Linear(backbone_channels, clip_channels)
            for i in range(decoder_layers):
                last = i == decoder_layers - 1
                self.blocks.append(
                    GatedCrossAttentionBlock(
                        clip_channels, heads, decoder_ffn_dim, dropout, gate_activation, fusion,
                        out_dim=feature_dim if last else None,
                    )
                )

    @classmethod
    def from_settings(cls, provider: ProviderSettings, gcat: GcatSettings) -> "GatedCrossAttentionTransformer":
        return cls(
            backbone_channels=provider.backbone_channels,
            grid=(provider.grid_height, provider.grid_width),
            clip_channels=provider.clip_channels,
            feature_dim=gcat.feature_dim,
            encoder_layers=gcat.encoder_layers,
            decoder_layers=gcat.decoder_layers,
            heads=gcat.heads,
            encoder_ffn_dim=gcat.encoder_ffn_dim,
            decoder_ffn_dim=gcat.decoder_ffn_dim,
            dropout=gcat.dropout,
            gate_activation=gcat.gate_activation,
            fusion=gcat.fusion,
            ablation=gcat.ablation,
        )

    @property
    def trainable(self) -> bool:
        return any(p.requires_grad for p in self.parameters())

    # ---------- Энкодер ----------
    def encode_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        """Self-attention блоки энкодера над готовыми токенами B × T × C′."""
        if self.encoder is None:
            raise ConfigError("энкодер отключён абляцией backbone_only")
        return self.encoder(tokens)

    def encode(self, v_b: torch.Tensor) -> EncoderState:
        """X_e = V_b + X_pos, развёрнутые в H′W′ токенов, затем блоки энкодера."""
        _expect(v_b, (self.backbone_channels, *self.grid), "encode")
        tokens = (v_b + self.position).flatten(2).transpose(1, 2)
        out = self.encode_tokens(tokens)
        if not torch.isfinite(out).all():
            raise NumericalError("энкодер: нечисловые значения на выходе")
        return EncoderState(tokens=out)

    # ---------- Декодер ----------
    def decode(self, state: EncoderState, v_c: torch.Tensor) -> DecoderOutput:
        """
        Двухветвевой gated cross-attention декодер.
        V_c можно передать с токеном 0 (k = H′W′ + 1) - он будет удалён - или уже без него.
        """
        if self.projection is None:
            raise ConfigError("декодер отключён абляцией")
        if v_c.shape[1] == self.n_tokens + 1:
            v_c = v_c[:, 1:, :]
        _expect(v_c, (self.n_tokens, self.clip_channels), "decode (V_c)")
        _expect(state.tokens, (self.n_tokens, self.backbone_channels), "decode (O_e)")

        o_e = self.projection(state.tokens)
        traces: List[BlockTrace] = []
        for i, block in enumerate(self.blocks):
            o_e, trace = block(o_e, v_c)
            if not torch.isfinite(o_e).all():
                raise NumericalError(f"декодер, блок {i + 1}: нечисловые значения")
            traces.append(trace)
        return DecoderOutput(features=o_e.mean(dim=1), tokens=o_e, traces=traces)

    def pool_encoder(self, state: EncoderState) -> torch.Tensor:
        """Вариант encoder_only: проекция токенов энкодера в d и среднее по токенам."""
        if self.encoder_head is None:
            raise ConfigError("голова энкодера есть только в абляции encoder_only")
        return self.encoder_head(state.tokens).mean(dim=1)

    def forward(self, v_b: torch.Tensor, v_c: torch.Tensor) -> torch.Tensor:
        """Признак жеста B × d для выбранного варианта модели."""
        if self.ablation == "backbone_only":
            _expect(v_b, (self.backbone_channels, *self.grid), "forward")
            return v_b.mean(dim=(2, 3))
        state = self.encode(v_b)
        if self.ablation == "encoder_only":
            return self.pool_encoder(state)
        return self.decode(state, v_c).features


class SemanticClassifierHead(nn.Module):
    """
    Классификатор первого этапа Φ_c: линейное отображение d → |S| без смещения,
    строка i инициализирована семантическим вектором видимого класса i и затем дообучается.
    """

    def __init__(self, semantics: torch.Tensor):
        super().__init__()
        n_classes, dim = semantics.shape
        self.linear = nn.Linear(dim, n_classes, bias=False)
        with torch.no_grad():
            self.linear.weight.copy_(semantics)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.linear(features)
