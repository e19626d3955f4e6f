"""
Server side of the simulation: client sampling, transport, weighted
aggregation, broadcast and evaluation.

One round:

    1. sample m of N clients
    2. each runs local_training from the current global parameters
    3. each update crosses the simulated uplink:
         quantize  quantize_set -> encode -> decode -> dequantize_set
         dp        clip + Gaussian noise, sent as float32
         none      sent as float32
    4. weighted mean of the received updates (weights |D_i|)
    5. the aggregated delta crosses the downlink (re-quantized under
       defense=quantize) and is added to the global parameters, which is
       what every client starts from next round
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from data.partition import partition
from fl.client import ClientState, local_training
from fl.config import ConfigError
from nn.backprop import forward_loss, init_params
from nn.model import build_model
from nn.params import GradSet, ParamEntry, ParamSet
from privacy.dp import privatize
from quant.gradset import dequantize_set, payload_bytes, quantize_set
from quant.policy import policy_from_config
from quant.wire import decode, encode, header_bytes


log = logging.getLogger(__name__)

EVAL_CHUNK = 500


class DivergenceError(ValueError):
    """Global parameters stopped being finite."""


@dataclass(frozen=True)
class RoundRecord:
    round: int
    clients: tuple
    accuracy: float
    loss: float
    client_loss: float
    upstream_bytes: int
    upstream_payload_bytes: int
    downstream_bytes: int
    downstream_payload_bytes: int
    wall_time: float = 0.0

    def to_row(self):
        """CSV row fields; wall time is left out so rows are reproducible."""
        return {
            'round': self.round,
            'clients': ';'.join(str(c) for c in self.clients),
            'accuracy': self.accuracy,
            'loss': self.loss,
            'client_loss': self.client_loss,
            'upstream_bytes': self.upstream_bytes,
            'upstream_payload_bytes': self.upstream_payload_bytes,
            'downstream_bytes': self.downstream_bytes,
            'downstream_payload_bytes': self.downstream_payload_bytes,
        }

    def to_dict(self):
        d = self.to_row()
        d['clients'] = list(self.clients)
        d['wall_time'] = self.wall_time
        return d


@dataclass
class ServerState:
    params: ParamSet
    policy: object = None
    round: int = 0
    history: list = field(default_factory=list)

    def record(self, rec):
        if rec.round <= self.round:
            raise ValueError(f'round index must increase: {rec.round} after {self.round}')
        self.round = rec.round
        self.history.append(rec)


def select_clients(n, m, rng):
    """m distinct client ids drawn uniformly without replacement, sorted."""
    if not 1 <= m <= n:
        raise ConfigError(f'cannot sample {m} of {n} clients')
    return sorted(int(i) for i in rng.choice(n, size=m, replace=False))


def aggregate(updates):
    """Weighted mean sum(w_i * u_i) / sum(w_i), accumulated in float64 in list order."""
    if not updates:
        raise ValueError('aggregate needs at least one update')
    first = updates[0][0]
    for u, w in updates:
        first.check_layout(u)
        if not w > 0:
            raise ValueError(f'aggregation weights must be > 0, got {w}')
    total = float(sum(w for _, w in updates))
    entries = []
    for k, e in enumerate(first):
        acc = np.zeros(e.value.shape, dtype=np.float64)
        for u, w in updates:
            acc += float(w) * u[k].value.astype(np.float64)
        entries.append(ParamEntry(e.layer_index, e.role, (acc / total).astype(e.value.dtype)))
    return GradSet(entries)


def transmit(update, config, policy=None, rng=None):
    """Send one update over the simulated link.

    Returns (received GradSet, message bytes, payload bytes).
    """
    if config.defense == 'quantize':
        if policy is None:
            raise ConfigError('defense=quantize needs a policy')
        qg = quantize_set(update, policy)
        message = encode(qg)
        return dequantize_set(decode(message)), len(message), payload_bytes(qg)
    if config.defense == 'dp':
        update = privatize(update, config.dp, rng)
    payload = payload_bytes(update)
    return update, header_bytes(update) + payload, payload


def evaluate(spec, params, test):
    """(top-1 accuracy, mean cross-entropy) over a labelled batch."""
    if test.size < 1:
        raise ValueError('evaluate needs a nonempty test set')
    correct = 0
    loss_sum = 0.0
    for start in range(0, test.size, EVAL_CHUNK):
        chunk = test.subset(slice(start, start + EVAL_CHUNK))
        logits, loss = forward_loss(spec, params, chunk)
        correct += int(np.sum(np.argmax(logits, axis=1) == chunk.labels))
        loss_sum += loss * chunk.size
    return correct / test.size, loss_sum / test.size


def client_loss(spec, params, clients):
    """Unweighted mean of every client's local loss under params."""
    return float(np.mean([evaluate(spec, params, c.data)[1] for c in clients]))


def _apply(params, delta):
    return params.zip_map(delta, lambda w, d: w + d, cls=ParamSet)


def run_round(spec, server, clients, config, test):
    """Advance the server by one round and return its RoundRecord."""
    started = time.perf_counter()
    t = server.round + 1
    sampled = select_clients(len(clients), config.m, np.random.default_rng([config.seed, t]))
    global_params = server.params

    def work(cid):
        client = clients[cid]
        rng = client.rng(t)
        update = local_training(spec, client, global_params, config, rng)
        received, nbytes, npayload = transmit(update, config, server.policy, rng)
        return received, client.size, nbytes, npayload

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, sampled))
    else:
        results = [work(cid) for cid in sampled]

    delta = aggregate([(received, size) for received, size, _, _ in results])
    upstream = sum(r[2] for r in results)
    upstream_payload = sum(r[3] for r in results)

    if config.quantization:
        qg = quantize_set(delta, server.policy)
        message = encode(qg)
        delta = dequantize_set(decode(message))
        down_msg, down_payload = len(message), payload_bytes(qg)
    else:
        down_payload = payload_bytes(delta)
        down_msg = header_bytes(delta) + down_payload

    server.params = _apply(global_params, delta)
    if not server.params.is_finite():
        raise DivergenceError(f'global parameters are not finite after round {t}')

    accuracy, loss = evaluate(spec, server.params, test)
    rec = RoundRecord(
        round=t,
        clients=tuple(sampled),
        accuracy=float(accuracy),
        loss=float(loss),
        client_loss=client_loss(spec, server.params, clients),
        upstream_bytes=int(upstream),
        upstream_payload_bytes=int(upstream_payload),
        downstream_bytes=int(config.m * down_msg),
        downstream_payload_bytes=int(config.m * down_payload),
        wall_time=time.perf_counter() - started,
    )
    server.record(rec)
    log.debug('round %d: clients %s acc %.4f loss %.4f up %d B down %d B',
              t, rec.clients, rec.accuracy, rec.loss, rec.upstream_bytes, rec.downstream_bytes)
    return rec


def make_clients(dataset, config):
    """Partition the training split into one ClientState per client."""
    rng = np.random.default_rng([config.seed, config.num_clients])
    shards = partition(dataset.train_y, config.num_clients, config.partition, rng, config.dirichlet_alpha)
    train = dataset.train_batch()
    return [ClientState(i, train.subset(idx), config.seed) for i, idx in enumerate(shards)], shards


def run_training(config, dataset, spec=None, progress=False):
    """T rounds of federated training.

    Returns (list of RoundRecord, final ParamSet).  Deterministic for a
    fixed config including its seed.
    """
    config.validate()
    if spec is None:
        spec = build_model(config.model, dataset.input_shape, dataset.classes, **config.model_options)
    params = init_params(spec, config.seed)
    policy = None
    if config.quantization:
        policy = policy_from_config(params.keys(), config.policy)
        policy.check_covers(params.keys())
    server = ServerState(params, policy)
    clients, _ = make_clients(dataset, config)
    test = dataset.test_batch()

    log.info('training %s on %s: defense=%s, N=%d, m=%d, T=%d',
             spec.name, dataset.name, config.defense, config.num_clients, config.m, config.rounds)
    for _ in tqdm(range(config.rounds), desc=f'fl[{config.defense}]', disable=not progress, leave=False):
        run_round(spec, server, clients, config, test)
    if server.history:
        last = server.history[-1]
        log.info('defense=%s finished: accuracy %.4f, loss %.4f', config.defense, last.accuracy, last.loss)
    return list(server.history), server.params

