"""Training algorithms: likelihood pre-training, value-head pre-training,
the bandit actor-critic loop, baseline updates, and an exact-gradient
enumeration oracle.

The bandit learner sees only scalar ratings of its own sampled outputs.
Each round draws one sample per source sentence, rates it, scores every
prefix with a separately trained value model, and pushes the policy
toward tokens whose centered reward (rating minus prefix value) is
positive. The value model regresses each prefix estimate onto the final
rating of the same sample. Both updates reuse the single sample, run on
mini-batch mean gradients, and step policy first, value model second.

References never touch the learner here except through the rating
callback, which keeps the feedback interface honest: swap in a human and
nothing changes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ContractViolation
from .reward import sentence_bleu
from .seq2seq import BOS, HEAD_SCALAR, Seq2SeqModel

MAX_ENUMERATION = 100_000


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for the epoch-based trainers."""

    epochs: int
    batch_size: int = 64
    alpha: float = 1e-3
    clip_norm: float | None = None

    def __post_init__(self):
        # epochs == 0 is a valid no-op (untrained reference / skipped phase)
        if self.epochs < 0 or self.batch_size < 1 or self.alpha <= 0:
            raise ContractViolation(f"bad training config {self}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int            # 1-based
    train_loss: float     # mean negative log-likelihood per target token
    dev_perplexity: float
    alpha: float          # learning rate in effect after this epoch's check


@dataclass
class StepOutcome:
    """Everything one bandit round produced for one sentence."""

    sample: object        # SampledTranslation
    reward: float
    values: list          # V(prefix) per emitted token
    advantages: list      # reward - value, per emitted token
    actor_loss: float
    critic_loss: float

    def __post_init__(self):
        m = len(self.sample.tokens)
        if not (len(self.values) == len(self.advantages) == m):
            raise ContractViolation("per-step counts disagree with sample length")


def _batches(indices, size):
    for i in range(0, len(indices), size):
        yield indices[i:i + size]


def _mle_backward(model: Seq2SeqModel, store: dc.ParamStore, pair) -> float:
    """Accumulate the gradient of -log P(y|x); returns that loss value."""
    node = model.sequence_log_prob_node(store, pair.source, pair.target)
    dc.backward(node, seed=-1.0)
    return -float(node.val)


def supervised_finetune_step(model: Seq2SeqModel, store: dc.ParamStore,
                             batch, optimizer: dc.Adam) -> float:
    """One mini-batch step of likelihood training on reference targets.

    Returns the batch mean negative log-likelihood (per sentence). This is
    the same inner step pre-training runs, exposed for fine-tuning a
    model on bandit-split references as a baseline.
    """
    if not batch:
        raise ContractViolation("empty batch")
    total = 0.0
    for pair in batch:
        total += _mle_backward(model, store, pair)
    optimizer.step(grad_scale=1.0 / len(batch))
    return total / len(batch)


def _dev_perplexity(model: Seq2SeqModel, store: dc.ParamStore, pairs) -> float:
    total_lp = 0.0
    total_tokens = 0
    for pair in pairs:
        total_lp += model.sequence_log_prob(store, pair.source, pair.target)
        total_tokens += len(pair.target)
    return float(np.exp(-total_lp / total_tokens))


def pretrain_supervised(model: Seq2SeqModel, train_pairs, dev_pairs,
                        config: TrainConfig, rng: dc.RandomStream,
                        store: dc.ParamStore | None = None):
    """Likelihood training with dev-triggered learning-rate halving.

    Runs `config.epochs` shuffled passes of mini-batch Adam. From the
    fifth epoch on, the learning rate halves after any epoch whose dev
    perplexity exceeds the previous epoch's. Returns (store, stats) with
    one EpochStats per epoch.
    """
    train_pairs = list(train_pairs)
    dev_pairs = list(dev_pairs)
    if not train_pairs or not dev_pairs:
        raise ContractViolation("pre-training needs non-empty train and dev sets")
    if store is None:
        store = model.init_params(rng.fork("init"))
    opt = dc.Adam(store, alpha=config.alpha)
    stats = []
    prev_ppl = None
    for epoch in range(1, config.epochs + 1):
        order = rng.fork("epoch", epoch).permutation(len(train_pairs))
        loss_sum = 0.0
        token_sum = 0
        for batch_idx in _batches(order, config.batch_size):
            batch = [train_pairs[i] for i in batch_idx]
            for pair in batch:
                loss_sum += _mle_backward(model, store, pair)
                token_sum += len(pair.target)
            opt.step(grad_scale=1.0 / len(batch), clip_norm=config.clip_norm)
        ppl = _dev_perplexity(model, store, dev_pairs)
        if epoch >= 5 and prev_ppl is not None and ppl > prev_ppl:
            opt.alpha *= 0.5
        prev_ppl = ppl
        stats.append(EpochStats(epoch, loss_sum / token_sum, ppl, opt.alpha))
    return store, stats


def critic_values(critic: Seq2SeqModel, critic_store: dc.ParamStore,
                  x, tokens) -> list:
    """V(prefix) for each position of a sampled sequence.

    The first value is emitted before any sampled token is consumed (the
    value model's decoder starts from the start symbol, like the policy's).
    """
    if critic.config.head != HEAD_SCALAR:
        raise ContractViolation("value model must use the scalar head")
    if not tokens:
        raise ContractViolation("empty sampled sequence")
    state = critic.initial_state(critic_store, x)
    prev = BOS
    values = []
    for tok in tokens:
        value, state = critic.decode_step(critic_store, state, prev)
        values.append(value)
        prev = tok
    return values


def _critic_backward(critic: Seq2SeqModel, critic_store: dc.ParamStore,
                     x, tokens, reward: float) -> float:
    """Accumulate the gradient of sum_t (V(prefix_t) - reward)^2."""
    run = critic.teacher_forced_nodes(critic_store, x, tokens, require_eos=False)
    loss = dc.add_n([dc.square(dc.affine(v, 1.0, -reward)) for v in run.values])
    dc.backward(loss)
    return float(loss.val)


def _actor_backward(model: Seq2SeqModel, store: dc.ParamStore,
                    x, tokens, advantages) -> float:
    """Accumulate the gradient of -sum_t advantage_t * log P(token_t | prefix).

    Advantages are constants here: no gradient flows through how they
    were computed.
    """
    run = model.teacher_forced_nodes(store, x, tokens, require_eos=False)
    loss = dc.add_n([dc.affine(lp, -adv)
                     for lp, adv in zip(run.step_log_probs, advantages)])
    dc.backward(loss)
    return float(loss.val)


def pretrain_critic(critic: Seq2SeqModel, model: Seq2SeqModel,
                    store: dc.ParamStore, train_pairs, config: TrainConfig,
                    rng: dc.RandomStream, reward_fn=None):
    """Fit the value model to ratings of the frozen policy's samples.

    For every sentence, draws one sample from the policy, scores it
    (default: exact sentence BLEU, no perturbations at this stage), and
    regresses every prefix value onto that score. Returns
    (critic_store, per-epoch mean losses).
    """
    train_pairs = list(train_pairs)
    if not train_pairs:
        raise ContractViolation("value-model pre-training needs a non-empty corpus")
    if reward_fn is None:
        reward_fn = lambda hyp, ref: sentence_bleu(hyp, ref).score
    critic_store = critic.init_params(rng.fork("init"))
    opt = dc.Adam(critic_store, alpha=config.alpha)
    epoch_losses = []
    for epoch in range(1, config.epochs + 1):
        erng = rng.fork("epoch", epoch)
        order = erng.permutation(len(train_pairs))
        loss_sum = 0.0
        steps = 0
        for batch_idx in _batches(order, config.batch_size):
            for i in batch_idx:
                pair = train_pairs[i]
                sample = model.sample(store, pair.source,
                                      erng.fork("sample", int(i)))
                reward = reward_fn(sample.tokens, pair.target)
                loss_sum += _critic_backward(critic, critic_store, pair.source,
                                             sample.tokens, reward)
                steps += 1
            opt.step(grad_scale=1.0 / len(batch_idx), clip_norm=config.clip_norm)
        epoch_losses.append(loss_sum / steps)
    return critic_store, epoch_losses


def a2c_batch_step(model: Seq2SeqModel, store: dc.ParamStore,
                   critic: Seq2SeqModel, critic_store: dc.ParamStore,
                   batch, rate_fn, actor_opt: dc.Adam, critic_opt: dc.Adam,
                   rng: dc.RandomStream, clip_norm: float | None = None):
    """One bandit round over a mini-batch: sample, rate, center, update.

    `rate_fn(tokens, reference) -> float` is the only channel through
    which references reach the learner. Per-sentence sampling streams are
    pre-forked from `rng` by batch position, so outcomes are independent
    of evaluation order. The policy updates before the value model; both
    see gradients averaged over the batch. Returns the per-sentence
    StepOutcome list.
    """
    if not batch:
        raise ContractViolation("empty batch")
    outcomes = []
    for j, pair in enumerate(batch):
        sample = model.sample(store, pair.source, rng.fork("sample", j))
        reward = float(rate_fn(sample.tokens, pair.target))
        values = critic_values(critic, critic_store, pair.source, sample.tokens)
        advantages = [reward - v for v in values]
        actor_loss = _actor_backward(model, store, pair.source, sample.tokens,
                                     advantages)
        critic_loss = _critic_backward(critic, critic_store, pair.source,
                                       sample.tokens, reward)
        outcomes.append(StepOutcome(sample, reward, values, advantages,
                                    actor_loss, critic_loss))
    scale = 1.0 / len(batch)
    actor_opt.step(grad_scale=scale, clip_norm=clip_norm)
    critic_opt.step(grad_scale=scale, clip_norm=clip_norm)
    return outcomes


def reinforce_step(model: Seq2SeqModel, store: dc.ParamStore, batch, rate_fn,
                   optimizer: dc.Adam, rng: dc.RandomStream,
                   clip_norm: float | None = None):
    """Policy-gradient update with the raw rating as the per-step weight.

    Exactly the bandit step with every prefix value pinned to zero and no
    value model to update; kept separate as the high-variance baseline.
    """
    if not batch:
        raise ContractViolation("empty batch")
    outcomes = []
    for j, pair in enumerate(batch):
        sample = model.sample(store, pair.source, rng.fork("sample", j))
        reward = float(rate_fn(sample.tokens, pair.target))
        advantages = [reward] * len(sample.tokens)
        actor_loss = _actor_backward(model, store, pair.source, sample.tokens,
                                     advantages)
        outcomes.append(StepOutcome(sample, reward, [0.0] * len(sample.tokens),
                                    advantages, actor_loss, 0.0))
    optimizer.step(grad_scale=1.0 / len(batch), clip_norm=clip_norm)
    return outcomes


def _complete_sequences(vocab_size: int, max_len: int):
    """Every outcome of ancestral sampling truncated at max_len.

    A sequence is complete when it ends with token 0 (end-of-sequence) or
    reaches max_len without one; the outcome probabilities sum to 1.
    """
    def extend(prefix):
        if len(prefix) == max_len:
            yield prefix
            return
        for tok in range(vocab_size):
            seq = prefix + (tok,)
            if tok == 0:
                yield seq
            else:
                yield from extend(seq)

    yield from extend(())


def exact_policy_gradient(model: Seq2SeqModel, store: dc.ParamStore, x,
                          reward_fn, max_len: int) -> dict:
    """Exact gradient of expected reward by enumerating every outcome.

    Sums P(y) * R(y) * grad log P(y) over all complete sequences (ascent
    direction). Only feasible on tiny instances; the outcome count is
    capped. `reward_fn(tokens) -> float` must be deterministic.
    """
    v = model.config.tgt_vocab_size
    if v ** max_len > MAX_ENUMERATION:
        raise ContractViolation(
            f"enumeration of {v}^{max_len} sequences exceeds {MAX_ENUMERATION}")
    store.zero_grads()
    total_mass = 0.0
    for seq in _complete_sequences(v, max_len):
        run = model.teacher_forced_nodes(store, x, list(seq), require_eos=False)
        node = run.total_log_prob
        prob = float(np.exp(node.val))
        total_mass += prob
        dc.backward(node, seed=prob * float(reward_fn(list(seq))))
    if abs(total_mass - 1.0) > 1e-9:
        raise ContractViolation(f"outcome probabilities sum to {total_mass}")
    grads = {name: store.grad(name).copy() for name in store.names()}
    store.zero_grads()
    return grads
