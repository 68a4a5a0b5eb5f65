"""The trainable code generator behind a scikit-learn style estimator.

``CodeGenerator`` exposes fit/predict/get_params so the model composes
with the usual tooling: ``fit`` runs teacher-forced training over encoded
samples (continuing from the current parameters when ``warm_start`` is
set), ``predict`` runs grammar-constrained generation.  The checkpoint is
a single npz archive of named arrays plus the configuration record.
"""

from __future__ import annotations

import json
import os
import random

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .grammar import Grammar, dump_grammar, load_grammar
from .nn.batching import ActionSpace, collate, prepare_sample
from .nn.core import ModelConfig
from .nn.net import GeneratedOutput, GenerationLimits, Seq2TreeNet, generate
from .textdata import EncodedSample, Vocabs, build_vocabs, terminal_tokens_of
from .validation import check_fitted

CHECKPOINT_HEADER = "codegen-test-ckpt-v1"


class CheckpointError(Exception):
    pass


class CodeGenerator(BaseEstimator):
    """Grammar-constrained neural code generation with test feedback inputs.

    Parameters mirror :class:`ModelConfig` plus training knobs.  The
    estimator owns its vocabularies after the first fit; pass ``vocabs``
    explicitly to share them across model variants.
    """

    def __init__(
        self,
        grammar: Grammar | None = None,
        d: int = 256,
        n_heads: int = 8,
        window: int = 3,
        conv_layers: int = 2,
        nl_blocks: int = 6,
        ast_blocks: int = 5,
        test_blocks: int = 6,
        code_blocks: int = 5,
        ff_first: int = 1024,
        dropout: float = 0.15,
        l_max: int = 512,
        s_max: int = 16,
        path_max: int = 16,
        epochs: int = 30,
        batch_size: int = 16,
        lr: float | None = None,
        seed: int = 0,
        warm_start: bool = False,
        min_freq_text: int = 2,
        vocabs: Vocabs | None = None,
    ):
        self.grammar = grammar
        self.d = d
        self.n_heads = n_heads
        self.window = window
        self.conv_layers = conv_layers
        self.nl_blocks = nl_blocks
        self.ast_blocks = ast_blocks
        self.test_blocks = test_blocks
        self.code_blocks = code_blocks
        self.ff_first = ff_first
        self.dropout = dropout
        self.l_max = l_max
        self.s_max = s_max
        self.path_max = path_max
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.warm_start = warm_start
        self.min_freq_text = min_freq_text
        self.vocabs = vocabs
        self.net_: Seq2TreeNet | None = None
        self.space_: ActionSpace | None = None
        self.loss_log_: list[float] = []

    # --- configuration --------------------------------------------------------

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d=self.d,
            n_heads=self.n_heads,
            window=self.window,
            conv_layers=self.conv_layers,
            nl_blocks=self.nl_blocks,
            ast_blocks=self.ast_blocks,
            test_blocks=self.test_blocks,
            code_blocks=self.code_blocks,
            ff_first=self.ff_first,
            dropout=self.dropout,
            l_max=self.l_max,
            s_max=self.s_max,
            path_max=self.path_max,
        )

    def _build_vocabs(self, samples: list[EncodedSample]) -> Vocabs:
        terminals = []
        for s in samples:
            if s.target_rules is not None:
                terminals.extend(terminal_tokens_of(s.target_rules))
        return build_vocabs(
            [s.nl for s in samples],
            [s.test_info for s in samples if s.test_info.length],
            terminals,
            min_freq_text=self.min_freq_text,
            s_max=self.s_max,
        )

    def _ensure_net(self, samples: list[EncodedSample]) -> None:
        if self.net_ is not None and self.warm_start:
            return
        if self.grammar is None:
            raise ValueError("a grammar is required before fitting")
        if self.vocabs is None:
            self.vocabs = self._build_vocabs(samples)
        self.space_ = ActionSpace(self.grammar, self.vocabs)
        torch.manual_seed(self.seed)
        self.net_ = Seq2TreeNet(self.model_config(), self.space_, seed=self.seed)
        self.loss_log_ = []

    # --- training ---------------------------------------------------------------

    def fit(self, samples: list[EncodedSample], epochs: int | None = None):
        """Teacher-forced training; returns self."""
        if not samples:
            raise ValueError("fit needs at least one sample")
        self._ensure_net(samples)
        net, space = self.net_, self.space_
        prepared = [
            prepare_sample(s, space, self.grammar, self.path_max) for s in samples
        ]
        opt_kwargs = {} if self.lr is None else {"lr": self.lr}
        optimizer = torch.optim.Adafactor(net.parameters(), **opt_kwargs)
        rng = random.Random(self.seed + 1)
        net.train()
        n_epochs = self.epochs if epochs is None else epochs
        for epoch in range(n_epochs):
            order = list(range(len(prepared)))
            rng.shuffle(order)
            for start in range(0, len(order), self.batch_size):
                chunk = [prepared[i] for i in order[start:start + self.batch_size]]
                batch = collate(chunk, space, self.path_max)
                optimizer.zero_grad()
                loss = net.forward_loss(batch)
                loss.backward()
                optimizer.step()
                self.loss_log_.append(loss.detach().item())
        net.eval()
        return self

    # --- inference ----------------------------------------------------------------

    def predict(
        self,
        samples: list[EncodedSample],
        limits: GenerationLimits | None = None,
    ) -> list[GeneratedOutput]:
        check_fitted(self, "net_")
        outputs = []
        for sample in samples:
            prepared = prepare_sample(
                sample, self.space_, self.grammar, self.path_max, need_target=False
            )
            outputs.append(generate(self.net_, self.grammar, prepared, limits))
        return outputs

    def predict_one(
        self, sample: EncodedSample, limits: GenerationLimits | None = None
    ) -> GeneratedOutput:
        return self.predict([sample], limits)[0]

    def score(self, samples: list[EncodedSample], references: list[str]) -> float:
        """Exact-match rate of predictions against reference code."""
        from .metrics import str_acc

        outputs = self.predict(samples)
        return float(str_acc([o.code for o in outputs], references))

    # --- persistence ----------------------------------------------------------------

    def save_checkpoint(self, path: str) -> None:
        check_fitted(self, "net_")
        arrays = {
            name: tensor.detach().cpu().numpy()
            for name, tensor in self.net_.state_dict().items()
        }
        meta = {
            "header": CHECKPOINT_HEADER,
            "config": self.model_config().to_dict(),
            "seed": self.seed,
        }
        arrays["__meta__"] = np.frombuffer(
            json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
        )
        np.savez(path, **arrays)

    def load_checkpoint(self, path: str) -> None:
        if self.grammar is None or self.vocabs is None:
            raise CheckpointError("set grammar and vocabs before loading weights")
        with np.load(path) as data:
            if "__meta__" not in data:
                raise CheckpointError("missing checkpoint metadata")
            meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
            if meta.get("header") != CHECKPOINT_HEADER:
                raise CheckpointError(f"unsupported checkpoint header {meta.get('header')!r}")
            cfg = ModelConfig.from_dict(meta["config"])
            for key, value in cfg.to_dict().items():
                if hasattr(self, key) and key != "n_rounds":
                    setattr(self, key, value)
            self.space_ = ActionSpace(self.grammar, self.vocabs)
            self.net_ = Seq2TreeNet(cfg, self.space_, seed=self.seed)
            state = {
                name: torch.from_numpy(np.array(data[name]))
                for name in data.files
                if name != "__meta__"
            }
        self.net_.load_state_dict(state)
        self.net_.eval()

    def save(self, directory: str) -> None:
        """Checkpoint plus the grammar and vocabularies needed to reload."""
        os.makedirs(directory, exist_ok=True)
        self.save_checkpoint(os.path.join(directory, "checkpoint.npz"))
        with open(os.path.join(directory, "grammar.txt"), "w") as fh:
            fh.write(dump_grammar(self.grammar))
        with open(os.path.join(directory, "vocabs.json"), "w") as fh:
            json.dump(
                {
                    "text": self.vocabs.text.to_list(),
                    "chars": self.vocabs.chars.to_list(),
                    "terminals": self.vocabs.terminals.to_list(),
                    "s_max": self.vocabs.s_max,
                },
                fh,
            )

    @classmethod
    def load(cls, directory: str, **overrides) -> "CodeGenerator":
        from .textdata import Vocab

        with open(os.path.join(directory, "grammar.txt")) as fh:
            grammar = load_grammar(fh.read())
        with open(os.path.join(directory, "vocabs.json")) as fh:
            raw = json.load(fh)
        vocabs = Vocabs(
            text=Vocab(raw["text"]),
            chars=Vocab(raw["chars"]),
            terminals=Vocab(raw["terminals"]),
            s_max=raw["s_max"],
        )
        est = cls(grammar=grammar, vocabs=vocabs, **overrides)
        est.load_checkpoint(os.path.join(directory, "checkpoint.npz"))
        return est
