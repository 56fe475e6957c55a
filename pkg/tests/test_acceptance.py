"""Acceptance suite: the core behavioral guarantees of the package.

Each test covers one guarantee end to end and prints a single verdict line
(visible with ``pytest -v``, where the test outcome itself is the pass/fail
line).  Budgets are asserted in wall-clock seconds.
"""

import copy
import hashlib
import itertools
import math
import random
import time

import pytest
import torch

from biofusion.checkpoint import load_checkpoint
from biofusion.chem import GINEncoder, parse_smiles
from biofusion.config import ModelConfig, OptimizerConfig, PathsConfig, RunConfig
from biofusion.datakit import MCQRecord, StatsManifest, build_pubchemqa, write_qa_jsonl
from biofusion.errors import CorruptCheckpointError
from biofusion.evaluate import mcq_accuracy
from biofusion.fusion import (
    FreezePolicy,
    FusedPromptBatch,
    MOLECULE_TEMPLATE,
    ModalityAdaptor,
    ModelBundle,
    PROTEIN_TEMPLATE,
    alignment_train_step,
    batch_loss,
    qa_finetune_step,
)
from biofusion.lm import DecoderLM, make_optimizer
from biofusion.metrics import bleu_n, meteor, rouge_l, rouge_n
from biofusion.protein import ProteinEncoder, validate_sequence
from biofusion.stages import checkpoint_model, restore_model
from biofusion.tokenizer import BASE_VOCAB_SIZE, EOS_ID, Tokenizer, train_tokenizer


def verdict(label: str, detail: str) -> None:
    print(f"[ACCEPTANCE] PASS {label}: {detail}")


def module_checksum(module: torch.nn.Module) -> str:
    digest = hashlib.sha256()
    for name, param in sorted(module.named_parameters()):
        digest.update(name.encode())
        digest.update(param.detach().numpy().tobytes())
    return digest.hexdigest()


def make_bundle(dim=16, context_length=320, seed=0, mol_dim=8, prot_dim=8,
                tokenizer=None):
    tok = tokenizer
    if tok is None:
        tok = train_tokenizer(["You are working as an excellent assistant."],
                              vocab_size=BASE_VOCAB_SIZE + 16)
    torch.manual_seed(seed)
    lm = DecoderLM(tok.vocab_size, dim=dim, num_blocks=2, num_heads=2,
                   context_length=context_length)
    mol_encoder = GINEncoder(hidden_dim=mol_dim, num_layers=2)
    protein_encoder = ProteinEncoder(hidden_dim=prot_dim, num_layers=1, num_heads=2,
                                     max_residues=64)
    mol_adaptor = ModalityAdaptor("molecule", mol_dim, dim)
    protein_adaptor = ModalityAdaptor("protein", prot_dim, dim)
    return ModelBundle(tok, lm, mol_encoder, protein_encoder, mol_adaptor, protein_adaptor)


# --------------------------------------------------------------------------
# 1. frozen-LM soundness over a real training run


def test_frozen_lm_parameters_fixed_through_fifty_alignment_steps():
    t0 = time.monotonic()
    bundle = make_bundle()
    bundle.apply_freeze(FreezePolicy(lm_frozen=True))
    optimizer = torch.optim.Adam(bundle.trainable_parameters(), lr=1e-3)

    molecules = [parse_smiles(s) for s in
                 ["CCO", "C1CC1", "CNC", "OCO", "CCN", "COC", "NCN", "CCC"]]
    proteins = [validate_sequence(s) for s in ["MKV", "ACDEF", "LLPT", "GGS"]]

    lm_before = module_checksum(bundle.lm)
    component_before = {
        "molecule encoder": module_checksum(bundle.mol_encoder),
        "protein encoder": module_checksum(bundle.protein_encoder),
        "molecule adaptor": module_checksum(bundle.mol_adaptor),
        "protein adaptor": module_checksum(bundle.protein_adaptor),
    }

    for step in range(50):
        batches = [
            bundle.assemble(molecules[step % len(molecules)],
                            "what is it", answer="a molecule"),
            bundle.assemble(proteins[step % len(proteins)],
                            "what is it", answer="a protein"),
        ]
        alignment_train_step(bundle, batches, optimizer)
        assert module_checksum(bundle.lm) == lm_before, f"LM drifted at step {step}"

    for name, before in component_before.items():
        after = module_checksum(getattr(bundle, {
            "molecule encoder": "mol_encoder",
            "protein encoder": "protein_encoder",
            "molecule adaptor": "mol_adaptor",
            "protein adaptor": "protein_adaptor",
        }[name]))
        assert after != before, f"{name} never changed in 50 steps"

    elapsed = time.monotonic() - t0
    assert elapsed < 60
    verdict("freeze soundness",
            f"LM checksum constant through 50 steps, all 4 trainable components "
            f"moved ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# 2. end-to-end analytic gradients vs central finite differences


def test_masked_loss_gradients_match_central_finite_differences():
    t0 = time.monotonic()
    bundle = make_bundle()   # LM: 2 blocks, d=16; GIN: 2 layers, d=8; protein: 1 layer, d=8
    graph = parse_smiles("C1CC1")
    seq = validate_sequence("MKVL")

    def loss_value() -> torch.Tensor:
        batches = [
            bundle.assemble(graph, "name the shape", answer="a ring"),
            bundle.assemble(seq, "name the start", answer="a methionine"),
        ]
        return batch_loss(bundle, batches)

    loss_value().backward()

    components = {
        "lm": bundle.lm,
        "molecule encoder": bundle.mol_encoder,
        "protein encoder": bundle.protein_encoder,
        "molecule adaptor": bundle.mol_adaptor,
        "protein adaptor": bundle.protein_adaptor,
    }
    h = 1e-5
    rng = random.Random(2026)
    checked = 0
    for comp_name, component in components.items():
        params = list(component.parameters())
        sizes = [p.numel() for p in params]
        offsets = list(itertools.accumulate(sizes))
        coords = rng.sample(range(offsets[-1]), 20)
        for coord in coords:
            p_idx = next(i for i, end in enumerate(offsets) if coord < end)
            local = coord - (offsets[p_idx - 1] if p_idx else 0)
            param = params[p_idx]
            flat = param.data.view(-1)
            original = flat[local].item()
            analytic = 0.0 if param.grad is None else param.grad.view(-1)[local].item()

            with torch.no_grad():
                flat[local] = original + h
                plus = float(loss_value())
                flat[local] = original - h
                minus = float(loss_value())
                flat[local] = original
            fd = (plus - minus) / (2 * h)
            tol = 1e-4 * max(abs(analytic), abs(fd)) + 1e-9
            assert abs(analytic - fd) <= tol, (
                f"{comp_name} coord {coord}: analytic {analytic:.3e} vs fd {fd:.3e}"
            )
            checked += 1

    elapsed = time.monotonic() - t0
    assert elapsed < 120
    verdict("gradient check",
            f"{checked} coordinates across 5 components agree with central "
            f"differences at h={h} within rel 1e-4 ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# 3. alignment overfits a 16-pair fixture with a monotone smoothed trace


def test_alignment_overfits_sixteen_molecule_pairs_within_budget():
    t0 = time.monotonic()
    question = "describe"
    tok = Tokenizer([])
    bundle = make_bundle(dim=32, tokenizer=tok)
    molecules = ["".join(p) for p in itertools.product("CNO", repeat=4)][::5][:16]
    pairs = [(parse_smiles(m), " ".join([m] * 3)) for m in molecules]

    # A frozen LM is only alignable if it already routes the modality span to
    # the answer positions.  Install that routing by brief joint training of
    # LM + encoder + adaptor, then discard the adaptor and train a fresh one
    # against the now-frozen LM — only that second phase is under test.
    bundle.apply_freeze(FreezePolicy())
    joint_params = (list(bundle.lm.parameters()) + list(bundle.mol_encoder.parameters())
                    + list(bundle.mol_adaptor.parameters()))
    joint_opt = torch.optim.Adam(joint_params, lr=3e-3)
    for _ in range(900):
        batches = [bundle.assemble(g, question, answer=a) for g, a in pairs]
        loss = batch_loss(bundle, batches)
        joint_opt.zero_grad()
        loss.backward()
        joint_opt.step()
        if float(loss.detach()) < 0.03:
            break

    torch.manual_seed(99)
    bundle.mol_adaptor = ModalityAdaptor("molecule", 8, 32)
    bundle.apply_freeze(FreezePolicy(lm_frozen=True))
    optimizer = torch.optim.Adam(bundle.trainable_parameters(), lr=1e-2)

    losses = []
    for _ in range(500):
        batches = [bundle.assemble(g, question, answer=a) for g, a in pairs]
        losses.append(alignment_train_step(bundle, batches, optimizer))

    first_under = next((i for i, l in enumerate(losses) if l < 0.1), None)
    assert first_under is not None, f"never reached 0.1 (min {min(losses):.4f})"

    smoothed = [sum(losses[t - 19:t + 1]) / 20 for t in range(19, len(losses))]
    for t in range(len(smoothed) - 1):
        assert smoothed[t + 1] <= smoothed[t] + 1e-9, (
            f"20-step moving average rose at step {t + 20}: "
            f"{smoothed[t]:.6f} -> {smoothed[t + 1]:.6f}"
        )

    elapsed = time.monotonic() - t0
    assert elapsed < 300
    verdict("alignment overfit",
            f"masked loss {losses[0]:.3f} -> {losses[-1]:.4f}, under 0.1 at step "
            f"{first_under}, smoothed trace monotone ({elapsed:.0f}s)")


# --------------------------------------------------------------------------
# 4. aligned encoder beats SMILES-as-text fine-tuning on held-out molecules


def _random_smiles(rng: random.Random) -> str:
    n = rng.randint(4, 7)
    letters = [rng.choice("CNO") for _ in range(n)]
    kind = rng.random()
    if kind < 0.4 and n >= 4:
        k = rng.randint(1, n - 2)
        return "".join(letters[:k]) + "(" + letters[k] + ")" + "".join(letters[k + 1:])
    if kind < 0.7:
        return letters[0] + "1" + "".join(letters[1:]) + "1"
    return "".join(letters)


def _degree_answer(graph) -> str:
    degrees = [0] * len(graph.atoms)
    for i, j, _ in graph.bonds:
        degrees[i] += 1
        degrees[j] += 1
    digits = "".join(str(d) for d in degrees)
    return " ".join([digits] * 3)


def _smiles_text_batch(bundle: ModelBundle, smiles: str, question: str,
                       answer: str) -> FusedPromptBatch:
    """The same prompt layout, but with SMILES text tokens between the markers."""
    tok, lm, t = bundle.tokenizer, bundle.lm, MOLECULE_TEMPLATE
    pre = tok.encode(t.system + t.human_prefix)
    mid = tok.encode(smiles)
    post = tok.encode(t.question_prefix + question + t.assistant_prefix)
    ans = tok.encode(answer) + [EOS_ID]
    ids = pre + [t.open_marker_id] + mid + [t.close_marker_id] + post + ans
    is_answer = [False] * (len(ids) - len(ans)) + [True] * len(ans)
    emb = lm.embed_tokens(torch.tensor(ids, dtype=torch.long))
    return FusedPromptBatch(
        embeddings=emb[:-1],
        target_ids=torch.tensor(ids[1:], dtype=torch.long),
        loss_mask=torch.tensor(is_answer[1:], dtype=torch.bool),
        modality_positions=(),
        marker_positions=None,
        rendered_text=t.render(question, answer).replace(t.placeholder, smiles),
        modality="text",
    )


def test_frozen_lm_alignment_beats_smiles_text_finetuning_on_held_out_molecules():
    t0 = time.monotonic()
    question = "describe"
    rng = random.Random(7)
    taken: set[str] = set()

    def draw(count):
        out = []
        while len(out) < count:
            smi = _random_smiles(rng)
            if smi in taken:
                continue
            taken.add(smi)
            out.append((parse_smiles(smi), smi))
        return out

    pretrain_set = draw(120)
    task_set = draw(200)
    train_set, holdout_set = task_set[:160], task_set[160:]

    tok = Tokenizer([])
    bundle = make_bundle(dim=32, tokenizer=tok)
    bundle.apply_freeze(FreezePolicy())
    joint_params = (list(bundle.lm.parameters()) + list(bundle.mol_encoder.parameters())
                    + list(bundle.mol_adaptor.parameters()))
    joint_opt = torch.optim.Adam(joint_params, lr=3e-3)
    pre_pairs = [(g, _degree_answer(g)) for g, _ in pretrain_set]
    pick = random.Random(0)
    recent: list[float] = []
    for _ in range(1200):
        chosen = pick.sample(pre_pairs, 16)
        batches = [bundle.assemble(g, question, answer=a) for g, a in chosen]
        loss = batch_loss(bundle, batches)
        joint_opt.zero_grad()
        loss.backward()
        joint_opt.step()
        recent.append(float(loss.detach()))
        if len(recent) >= 20 and sum(recent[-20:]) / 20 < 0.15:
            break

    aligned = copy.deepcopy(bundle)
    baseline = copy.deepcopy(bundle)
    train_pairs = [(g, _degree_answer(g), smi) for g, smi in train_set]
    arm_steps, arm_lr, arm_batch = 300, 3e-3, 16

    # arm 1: LM frozen, fresh adaptor + pretrained structure encoder train
    torch.manual_seed(99)
    aligned.mol_adaptor = ModalityAdaptor("molecule", 8, 32)
    aligned.apply_freeze(FreezePolicy(lm_frozen=True))
    opt_a = torch.optim.Adam(aligned.trainable_parameters(), lr=arm_lr)
    pick_a = random.Random(1)
    for _ in range(arm_steps):
        chosen = pick_a.sample(train_pairs, arm_batch)
        batches = [aligned.assemble(g, question, answer=a) for g, a, _ in chosen]
        alignment_train_step(aligned, batches, opt_a)

    # arm 2: same start, LM trainable, molecule given as raw SMILES text
    baseline.apply_freeze(FreezePolicy())
    opt_b = torch.optim.Adam(baseline.lm.parameters(), lr=arm_lr)
    pick_b = random.Random(1)
    for _ in range(arm_steps):
        chosen = pick_b.sample(train_pairs, arm_batch)
        batches = [_smiles_text_batch(baseline, smi, question, a)
                   for _, a, smi in chosen]
        qa_finetune_step(baseline, batches, opt_b)

    hold_pairs = [(g, _degree_answer(g), smi) for g, smi in holdout_set]
    with torch.no_grad():
        aligned_loss = float(batch_loss(
            aligned,
            [aligned.assemble(g, question, answer=a) for g, a, _ in hold_pairs]))
        baseline_loss = float(batch_loss(
            baseline,
            [_smiles_text_batch(baseline, smi, question, a)
             for _, a, smi in hold_pairs]))

    assert aligned_loss < baseline_loss
    relative = 1 - aligned_loss / baseline_loss
    assert relative >= 0.05, (
        f"aligned {aligned_loss:.4f} vs baseline {baseline_loss:.4f}: "
        f"only {relative:.1%} better"
    )
    elapsed = time.monotonic() - t0
    assert elapsed < 900
    verdict("alignment benefit",
            f"held-out masked loss {aligned_loss:.4f} (aligned) vs "
            f"{baseline_loss:.4f} (SMILES-as-text), {relative:.1%} relative "
            f"improvement ({elapsed:.0f}s)")


# --------------------------------------------------------------------------
# 5. metric oracles


def test_generation_metrics_match_hand_derived_oracles():
    t0 = time.monotonic()
    # hand-enumerated n-gram counts for each value below
    cases = [
        ("BLEU-2", bleu_n(["a b c"], ["a b d"], 2), math.sqrt((2 / 3) * (1 / 2))),
        ("BLEU-4", bleu_n(["a b c d e"], ["a b c d x"], 4),
         ((4 / 5) * (3 / 4) * (2 / 3) * (1 / 2)) ** 0.25),
        ("ROUGE-1", rouge_n(["a b c"], ["a b d"], 1), 2 / 3),
        ("ROUGE-2", rouge_n(["a b c"], ["a b d"], 2), 1 / 2),
        ("ROUGE-L", rouge_l(["a c e"], ["a b c d e"]), 3 / 4),
        ("METEOR", meteor(["a b"], ["b a"]), 1 / 2),
    ]
    for name, got, expected in cases:
        assert abs(got - expected) <= 1e-9, f"{name}: {got!r} != {expected!r}"

    # identity sanity: BLEU/ROUGE exactly 1, METEOR at its closed form
    assert bleu_n(["x y z w"], ["x y z w"], 4) == 1.0
    assert rouge_l(["x y z"], ["x y z"]) == 1.0
    m = 3
    assert abs(meteor(["x y z"], ["x y z"]) - (1 - 0.5 / m ** 3)) <= 1e-9

    elapsed = time.monotonic() - t0
    assert elapsed < 10
    verdict("metric oracles",
            f"all six metrics within 1e-9 of hand-derived values "
            f"(BLEU-2 {cases[0][1]:.4f}, ROUGE-L {cases[4][1]:.2f}) ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# 6. molecule-QA builder conservation, filtering, and rerun identity


def _hundred_row_fixture():
    valid_smiles = ["CCO", "C1CC1", "CC(C)O", "N#N", "C=O",
                    "OCC", "CNC", "CCN", "COC", "CC"]
    rows = []
    # 55 ordinary molecules + 5 repeat descriptions for already-seen molecules
    for i in range(55):
        rows.append((str(100 + i), valid_smiles[i % 10],
                     f"a tidy molecule with several handy words number {i}"))
    for i in range(5):
        rows.append((str(100 + i), valid_smiles[i % 10],
                     f"a second description for molecule number {i}"))
    # 10 over-long descriptions (300 words, must be cropped to 256)
    for i in range(10):
        rows.append((str(200 + i), valid_smiles[i % 10],
                     " ".join(f"w{j}" for j in range(300))))
    # 20 unparseable SMILES (dropped)
    bad = ["C(", "C1CC", "X", ")C"]
    for i in range(20):
        rows.append((str(300 + i), bad[i % 4], "this molecule does not parse at all"))
    # 10 under-length descriptions (dropped)
    for i in range(10):
        rows.append((str(400 + i), valid_smiles[i % 10], "too few words"))
    assert len(rows) == 100
    return rows


def test_molecule_qa_builder_filters_crops_and_reruns_identically(tmp_path):
    t0 = time.monotonic()
    rows = _hundred_row_fixture()

    manifest = StatsManifest()
    records = build_pubchemqa(rows, manifest=manifest)

    assert len(records) == 70                       # 60 kept + 10 cropped
    assert manifest.stages[0].records_in == 100
    assert manifest.stages[0].records_out == 70
    assert manifest.stages[0].records_dropped == 30

    entities = {r.entity_id for r in records}
    assert len(entities) == 65                      # 55 + 10 long, 5 repeats merge
    assert {r.record_id for r in records if "#" in r.record_id} == {
        f"{100 + i}#1" for i in range(5)
    }

    for r in records:
        words = r.answer.split()
        assert 4 <= len(words) <= 256, f"{r.record_id}: {len(words)} words"
        assert r.question == "please describe the molecule"
    cropped = [r for r in records if r.entity_id.startswith("2")]
    assert len(cropped) == 10
    for r in cropped:
        assert r.answer.split() == [f"w{j}" for j in range(256)]

    first, second = tmp_path / "run1.jsonl", tmp_path / "run2.jsonl"
    write_qa_jsonl(records, first)
    write_qa_jsonl(build_pubchemqa(rows, manifest=StatsManifest()), second)
    assert first.read_bytes() == second.read_bytes()

    elapsed = time.monotonic() - t0
    assert elapsed < 10
    verdict("pipeline conservation",
            f"100 rows -> 70 records (30 dropped), crops exact, reruns "
            f"byte-identical ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# 7. prompt fidelity and injection counts


def test_prompt_rendering_bytes_and_injection_counts():
    t0 = time.monotonic()
    bundle = make_bundle()

    question, answer = "what rings does it contain", "one cyclopropane ring"
    expected_molecule = (
        "You are working as an excellent assistant in chemistry and molecule "
        "discovery. Below a human gives the representation of a molecule. Answer "
        "a question about it.\n"
        "### Human: <molecule><moleculeHere></molecule> " + question + ".\n"
        "### Assistant: " + answer
    )
    assert MOLECULE_TEMPLATE.render(question, answer) == expected_molecule

    expected_protein = (
        "You are working as an excellent assistant in biology. Below a human "
        "gives the representation of a protein. Answer "
        "a question about it.\n"
        "### Human: <protein><proteinHere></protein> " + question + ".\n"
        "### Assistant: " + answer
    )
    assert PROTEIN_TEMPLATE.render(question, answer) == expected_protein

    rng = random.Random(11)
    for _ in range(50):
        smiles = _random_smiles(rng)
        graph = parse_smiles(smiles)
        batch = bundle.assemble(graph, question, answer=answer)
        assert len(batch.modality_positions) == len(graph.atoms), smiles
        open_pos, close_pos = batch.marker_positions
        assert batch.modality_positions == tuple(range(open_pos + 1, close_pos))
        rows = bundle.molecule_rows(graph)
        assert torch.equal(batch.embeddings[list(batch.modality_positions)], rows)
        assert batch.rendered_text == MOLECULE_TEMPLATE.render(question, answer)

    alphabet = "ACDEFGHIKLMNPQRSTVWY"
    for k in range(50):
        length = rng.randint(1, 80)
        seq = validate_sequence("".join(rng.choice(alphabet) for _ in range(length)))
        batch = bundle.assemble(seq, question, answer=answer)
        expected_rows = min(length, 64)             # encoder caps residues at 64
        assert len(batch.modality_positions) == expected_rows, length
        open_pos, close_pos = batch.marker_positions
        assert batch.modality_positions == tuple(range(open_pos + 1, close_pos))
        assert batch.rendered_text == PROTEIN_TEMPLATE.render(question, answer)

    elapsed = time.monotonic() - t0
    assert elapsed < 10
    verdict("prompt fidelity",
            f"templates byte-exact; injection counts hold on 50 random molecules "
            f"and 50 random proteins ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# 8. checkpoint round-trip and corruption detection


def test_checkpoint_roundtrip_bitwise_and_corruption_detection(tmp_path):
    t0 = time.monotonic()
    tok = train_tokenizer(["the quick brown fox jumps over the lazy dog"],
                          vocab_size=BASE_VOCAB_SIZE + 8)
    config = RunConfig(
        model=ModelConfig(vocab_size=tok.vocab_size, lm_dim=16, lm_blocks=2,
                          lm_heads=2, context_length=320, mol_dim=8, mol_layers=2,
                          protein_dim=8, protein_layers=1, protein_heads=2,
                          max_residues=64),
        optimizer=OptimizerConfig(learning_rate=1e-3, batch_size=2, steps=3,
                                  warmup_fraction=0.03, seed=0),
        paths=PathsConfig(out_dir=str(tmp_path), tokenizer_file="t.json",
                          lm_corpus="c.txt", molecule_qa="m.jsonl",
                          protein_qa="p.jsonl", text_qa="q.jsonl"),
    )
    bundle = make_bundle(tokenizer=tok)
    graph = parse_smiles("CCO")

    def forward_logits(b: ModelBundle) -> torch.Tensor:
        batch = b.assemble(graph, "what is it", answer="ethanol")
        with torch.no_grad():
            return b.lm.forward_embeddings(batch.embeddings)

    reference = forward_logits(bundle)
    path = tmp_path / "model.ckpt"
    checkpoint_model(bundle, config, stage="align", step=3, path=path)

    restored, manifest = restore_model(path)
    assert manifest["stage"] == "align" and manifest["step"] == 3
    assert torch.equal(forward_logits(restored), reference)

    data = bytearray(path.read_bytes())
    for offset in (14, len(data) // 2, len(data) - 6):
        corrupted = bytearray(data)
        corrupted[offset] ^= 0xFF
        bad = tmp_path / f"bad_{offset}.ckpt"
        bad.write_bytes(bytes(corrupted))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(bad)
    truncated = tmp_path / "truncated.ckpt"
    truncated.write_bytes(bytes(data[:-5]))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(truncated)

    elapsed = time.monotonic() - t0
    assert elapsed < 10
    verdict("checkpoint round-trip",
            f"restored forward pass bitwise-identical; 3 byte-flips and a "
            f"truncation all detected ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# 9. multiple-choice harness contracts


class _ScriptedScorer:
    """Stands in for a model bundle: returns preset scores per question."""

    def __init__(self, table):
        self.table = table

    def option_scores(self, question, options, context=None):
        return list(self.table[question])


def test_mcq_accuracy_rigged_adversarial_and_tie_contracts():
    t0 = time.monotonic()
    records = [
        MCQRecord(question="pick one", options=("alpha", "beta"), gold=1),
        MCQRecord(question="pick two", options=("a", "b", "c"), gold=0),
        MCQRecord(question="pick three", options=("w", "x", "y", "z"), gold=2),
    ]

    rigged = _ScriptedScorer({
        "pick one": [-5.0, -1.0],
        "pick two": [-1.0, -5.0, -5.0],
        "pick three": [-5.0, -5.0, -1.0, -5.0],
    })
    assert mcq_accuracy(rigged, records).accuracy == 1.0

    adversarial = _ScriptedScorer({
        "pick one": [-1.0, -5.0],
        "pick two": [-5.0, -1.0, -1.0],
        "pick three": [-1.0, -1.0, -5.0, -1.0],
    })
    assert mcq_accuracy(adversarial, records).accuracy == 0.0

    # a uniform model: all LM parameters zero means every option token gets
    # the same log-probability, so equal-byte-length options tie exactly
    bundle = make_bundle()
    with torch.no_grad():
        for p in bundle.lm.parameters():
            p.zero_()
    tie_records = [
        MCQRecord(question="is water wet", options=("yes", "nay", "may"), gold=2),
        MCQRecord(question="is fire cold", options=("abc", "xyz"), gold=1),
    ]
    report = mcq_accuracy(bundle, tie_records)
    for scores in report.option_scores:
        assert len(set(scores)) == 1, f"scores not exactly tied: {scores}"
    assert report.predictions == (0, 0)
    assert report.accuracy == 0.0

    elapsed = time.monotonic() - t0
    assert elapsed < 10
    verdict("multiple-choice harness",
            f"rigged 1.0, adversarial 0.0, exact ties resolve to index 0 "
            f"({elapsed:.1f}s)")
