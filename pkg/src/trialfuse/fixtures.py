"""Seeded synthetic data: the 200-record pipeline corpus and the
planted-interaction dataset whose label depends jointly on drug and disease
cluster while every single modality is uninformative by construction."""
from __future__ import annotations

import numpy as np

from .embedding import StubEncoder, eligibility_vector, stub_encode
from .training import Sample

# (name, smiles) pairs; SMILES stay within the organic-subset grammar.
DRUG_POOL = [
    ("aspirin", "CC(=O)OC1=CC=CC=C1C(=O)O"),
    ("metformin", "CN(C)C(=N)NC(=N)N"),
    ("ibuprofen", "CC(C)CC1=CC=C(C=C1)C(C)C(=O)O"),
    ("acetaminophen", "CC(=O)NC1=CC=C(C=C1)O"),
    ("caffeine", "CN1C=NC2=C1C(=O)N(C)C(=O)N2C"),
    ("ethambutol", "CCC(CO)NCCNC(CC)CO"),
    ("nicotinamide", "C1=CC(=CN=C1)C(=O)N"),
    ("valproate", "CCCC(CCC)C(=O)O"),
]

# (disease surface form, coherent code in the bundled ontology)
DISEASE_POOL = [
    ("irritable bowel syndrome", "K58"),
    ("non-small cell lung cancer", "C3411"),
    ("asthma", "J45"),
    ("essential hypertension", "I10"),
    ("type 2 diabetes mellitus", "E11"),
    ("chronic obstructive pulmonary disease", "J44"),
    ("heart failure", "I50"),
    ("major depressive disorder", "F32"),
    ("rheumatoid arthritis", "M05"),
    ("psoriasis", "L40"),
    ("breast cancer", "C50"),
    ("prostate cancer", "C61"),
]

CRITERIA_POOL = [
    ("Inclusion Criteria:\n* Adults aged 18 yrs or older.\n"
     "* Confirmed diagnosis by a qualified physician.\n"
     "Exclusion Criteria:\n* Pregnant or breastfeeding women are excluded.\n"
     "* Known hypersensitivity to the study drug."),
    ("Inclusion Criteria:\n* Age between 18 and 75 years.\n"
     "* Body weight above 50 kgs.\n"
     "Exclusion Criteria:\n* Participants with severe renal impairment are not eligible.\n"
     "* Prior enrollment in an interventional study within 30 days."),
    ("Inclusion Criteria:\n* Signed informed consent.\n"
     "* Stable dose of background medication for 4 weeks.\n"
     "Exclusion Criteria:\n* History of malignancy within 5 years is excluded.\n"
     "* Uncontrolled cardiovascular disease."),
    ("Inclusion Criteria:\n* Documented disease activity at screening.\n"
     "Exclusion Criteria:\n* Active infection requiring systemic treatment is excluded."),
]

ENDPOINT_POOL = [
    "change from baseline in symptom score at week 12",
    "overall response rate at 6 months",
    "time to first exacerbation",
    "proportion of participants achieving remission",
]

PHASE_POOL = ["PHASE1", "PHASE2", "PHASE3", "PHASE1, PHASE2", "PHASE2, PHASE3"]


def _valid_record(i: int, rng: np.random.Generator) -> dict:
    drug = DRUG_POOL[int(rng.integers(len(DRUG_POOL)))]
    disease = DISEASE_POOL[int(rng.integers(len(DISEASE_POOL)))]
    phase = PHASE_POOL[int(rng.integers(len(PHASE_POOL)))]
    enrollment = int(rng.integers(60, 800))
    record = {
        "nct_id": f"NCT{10000000 + i:08d}",
        "phase": phase,
        "diseases": [disease[0]],
        "icdcode": [disease[1]],
        "drugs": [drug[0]],
        "smiles": [drug[1]],
        "criteria": CRITERIA_POOL[int(rng.integers(len(CRITERIA_POOL)))],
        "enrollment": enrollment,
        "arms": int(rng.integers(2, 4)),
        "randomization": bool(rng.integers(2)),
        "blinding": ["open", "single", "double"][int(rng.integers(3))],
        "comparator": ["placebo", "standard_of_care", "active"][int(rng.integers(3))],
        "primary_endpoint": ENDPOINT_POOL[int(rng.integers(len(ENDPOINT_POOL)))],
        "label": int(rng.integers(2)),
    }
    return record


def _invalid_variant(record: dict, kind: int, rng: np.random.Generator) -> dict:
    record = dict(record)
    if kind == 0:                                    # Phase III under-enrolled
        record["phase"] = "PHASE3"
        record["enrollment"] = int(rng.integers(1, 30))
    elif kind == 1:                                  # comparator with one arm
        record["arms"] = 1
        record["comparator"] = "placebo"
    elif kind == 2:                                  # unrepairable enrollment
        record["enrollment"] = f"approximately {int(rng.integers(50, 400))}"
    else:                                            # incoherent ICD code
        record["diseases"] = ["epilepsy"]
        record["icdcode"] = ["C50"]
    return record


def _repairable_variant(record: dict, kind: int) -> dict:
    record = dict(record)
    if kind == 0:                                    # numeric string enrollment
        record["enrollment"] = str(record["enrollment"])
    elif kind == 1:                                  # duplicate list entries
        record["diseases"] = record["diseases"] * 2
    else:                                            # synonym surface form
        surfaces = {"irritable bowel syndrome": "IBS",
                    "non-small cell lung cancer": "NSCLC",
                    "chronic obstructive pulmonary disease": "COPD",
                    "essential hypertension": "high blood pressure"}
        disease = record["diseases"][0]
        record["diseases"] = [surfaces.get(disease, disease)]
    return record


def fixture_corpus(n: int = 200, seed: int = 0) -> list[dict]:
    """JSON-shaped trial records spanning all phases: mostly valid labeled
    records, a repairable slice, and deliberately invalid records that the
    validator must reject."""
    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    for i in range(n):
        record = _valid_record(i, rng)
        slot = i % 10
        if slot == 8:
            record = _invalid_variant(record, (i // 10) % 4, rng)
        elif slot == 9:
            record = _repairable_variant(record, (i // 10) % 3)
        records.append(record)
    return records


# --- planted-interaction dataset -------------------------------------------

SUMMARY_POOL = [
    "This randomized trial evaluates an investigational agent against standard care.",
    "A multicenter study assessing safety and tolerability in adult participants.",
    "This trial measures symptomatic improvement over a 12 week treatment period.",
    "An outpatient study with scheduled follow-up visits through month six.",
    "This study compares once-daily dosing with a twice-daily regimen.",
]

DESCRIPTION_POOL = [
    "Participants attend weekly visits. Vital signs are recorded. Adverse events are monitored. Final assessment occurs at study end.",
    "The protocol uses a parallel group design. Dosing starts at the lowest level. Escalation follows a fixed schedule. Safety reviews gate each step.",
    "Screening lasts two weeks. Treatment continues for twelve weeks. A follow-up call closes participation. Data are reviewed by a monitoring board.",
    "Eligible participants are randomized centrally. Study drug is dispensed monthly. Compliance is tracked by diary. Outcomes are assessed blinded.",
    "The study enrolls at ten sites. Each site follows a common manual. Samples ship to a central laboratory. Results return within one week.",
]


def synergy_dataset(n: int = 1200, dim: int = 64, seed: int = 0,
                    n_drug: int = 8, n_disease: int = 8) -> list[Sample]:
    """Samples whose label is the XOR of the drug cluster and the disease
    cluster. Drug/disease combinations are balanced, so the marginal label
    distribution given any single modality is uniform and only the joint
    drug-disease signal predicts the outcome (Bayes AUC = 1)."""
    drugs = DRUG_POOL[:n_drug]
    diseases = [d for d, _ in DISEASE_POOL[:n_disease]]
    rng = np.random.Generator(np.random.PCG64(seed))
    encoder = StubEncoder(output_dim=dim)

    combos = [(a, b) for a in range(n_drug) for b in range(n_disease)]
    picks = [combos[i % len(combos)] for i in range(n)]
    order = rng.permutation(n)

    samples = []
    for idx in range(n):
        a, b = picks[order[idx]]
        name, smiles = drugs[a]
        disease = diseases[b]
        label = (a * 2 // n_drug) ^ (b * 2 // n_disease)
        criteria = CRITERIA_POOL[int(rng.integers(len(CRITERIA_POOL)))]
        inputs = {
            "smiles": stub_encode("molecular", smiles, dim),
            "criteria": eligibility_vector(criteria, encoder),
            "diseases": stub_encode("ontology", disease, dim),
            "summarization": stub_encode(
                "protocol", SUMMARY_POOL[int(rng.integers(len(SUMMARY_POOL)))], dim),
            "description": stub_encode(
                "protocol", DESCRIPTION_POOL[int(rng.integers(len(DESCRIPTION_POOL)))], dim),
            "enrollment": stub_encode("protocol", str(int(rng.integers(40, 900))), dim),
            "drugs": stub_encode("molecular", name, dim),
        }
        phase = ["I", "II", "III"][idx % 3]
        samples.append(Sample(f"syn{idx:05d}", inputs, label, phase))
    return samples
