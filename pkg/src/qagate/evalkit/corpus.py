"""Deterministic synthetic corpus with planted sensitive literals.

Documents are templated incident reports and manual sections. Sensitive
elements (person names, emails, phones, addresses, organizations, part
numbers, incident phrases) are planted at recorded character offsets, and
every gazetteer-detectable plant is included in the generated gazetteer so
ingestion tags all plants. Personal data is confined to the final
"Personnel and Contacts" section of incident reports so that technical
content lives in separate chunks.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from ..ingest import DocumentSource
from ..policy import SensitivityTag

ASSET_ID = "asset-synthetic"
PROVIDER_ID = "provider-evalkit"

_FIRST_NAMES = (
    "Mara", "Jonas", "Ilse", "Petra", "Viktor", "Sanna", "Rolf", "Greta",
    "Tomas", "Elif", "Nadia", "Oskar", "Livia", "Bram", "Katrin", "Deniz",
    "Helga", "Milan", "Ruta", "Sven",
)
_LAST_NAMES = (
    "Vellin", "Okafor", "Brandt", "Hasek", "Lundqvist", "Moreau", "Keller",
    "Sorin", "Alvers", "Dragan", "Novak", "Ostrem", "Pekkan", "Quist",
    "Rehn", "Salo", "Tives", "Ulmer", "Varga", "Femi",
)
_ORGS = (
    "Helix Manufacturing", "Nordwind Logistics", "Bluecrest Components",
    "Vantor Industrial", "Ostbach Engineering", "Pyrite Controls",
    "Seaborn Fittings", "Quellwerk Systems",
)
_SITES = (
    "Northfield Depot", "Riverside Facility", "Harbor Workshop",
    "Westgate Annex", "Calder Yard", "Eastvale Terminal", "Granite Hollow",
    "Plant Seven", "Brockmoor Hall", "Skyline Works",
)
_COMPONENTS = (
    "cooling pump", "hydraulic press", "conveyor drive", "pressure valve",
    "ventilation fan", "control relay", "coolant manifold", "brake actuator",
    "filter housing", "gear coupling",
)
_FAILURES = (
    "bearing seizure after prolonged overheating",
    "seal rupture under repeated pressure spikes",
    "intermittent sensor dropouts during warm-up",
    "insulation wear on the main winding",
    "cavitation damage to the impeller blades",
    "fatigue cracking near the mounting flange",
    "clogged intake screens reducing coolant flow",
    "progressive misalignment of the drive shaft",
)
_OBSERVATIONS = (
    "discoloration consistent with sustained heat exposure",
    "metal shavings accumulated inside the lower housing",
    "a hairline fracture running along the weld seam",
    "abnormal play in the thrust bearing",
    "scoring marks across the piston surface",
    "moisture ingress past the degraded gasket",
)
_ROOT_CAUSES = (
    "a lapsed lubrication interval",
    "an undersized relief spring installed at the last overhaul",
    "vibration transmitted from the adjacent compressor skid",
    "contaminated coolant left in the loop after flushing",
    "a miscalibrated torque wrench used during assembly",
    "thermal cycling beyond the rated envelope",
)
_REMEDIES = (
    "replacing the worn bearing set and flushing the lubrication loop",
    "installing the correctly rated relief spring and re-seating the seal",
    "adding vibration dampers and re-torquing the mounting bolts",
    "swapping the gasket kit and drying the terminal box",
    "rebalancing the rotor and renewing the coupling insert",
    "fitting a new impeller and cleaning the intake screens",
)
_SHIFTS = ("night", "dawn", "weekend", "holiday", "second")
_PERIODS = ("March", "April", "the spring quarter", "the winter window", "September")
_EVENT_KINDS = ("overheating", "shutdown", "leakage", "vibration", "tripping")
_STREETS = (
    "14 Harbor Lane", "3 Foundry Row", "88 Kiln Street", "27 Dockside Avenue",
    "5 Ember Court", "61 Quarry Bend",
)
_INCIDENT_PHRASES = (
    "operator error during the night shift handover",
    "unauthorized bypass of the safety interlock",
    "delayed alarm acknowledgement in the control room",
    "an improvised repair using non-approved parts",
    "a skipped lockout procedure before maintenance",
)
_ANALYSIS_FILLER = (
    "Vibration readings returned to tolerance once the load was shed.",
    "No secondary damage was found in the adjacent housing.",
    "Thermal imaging confirmed the hot spot had dissipated by morning.",
    "The standby unit carried the load without further alarms.",
    "Acoustic monitoring picked up no residual anomalies afterwards.",
)
_LOG_FILLER = (
    "Operators acknowledged each alarm within the required interval.",
    "No other production line reported related disturbances.",
    "The monitoring hub archived the full alarm sequence for review.",
    "Trend charts show the parameter drifting for two days beforehand.",
    "Standby capacity absorbed the lost throughput without schedule impact.",
    "Spare consumption stayed within the quarterly allocation.",
    "The shift log notes routine conditions before the first alarm.",
    "Ambient readings in the hall stayed inside the comfort band.",
)
_PROCEDURE_FILLER = (
    "Inspect the sealing faces for scoring before reassembly.",
    "Use only the approved solvent when cleaning the bores.",
    "Confirm the guard rails are refitted before restoring power.",
    "Rotate the shaft by hand to verify free movement.",
)


@dataclass(frozen=True)
class PlantedSecret:
    literal: str
    category: SensitivityTag
    doc_id: str
    char_range: tuple


@dataclass(frozen=True)
class SeededCorpus:
    documents: tuple
    planted_secrets: tuple
    gazetteer: dict
    asset_id: str = ASSET_ID
    provider_id: str = PROVIDER_ID
    facts: dict = field(default_factory=dict, repr=False, compare=False)

    def secrets_for_doc(self, doc_id: str) -> list:
        return [s for s in self.planted_secrets if s.doc_id == doc_id]


@dataclass
class DocFacts:
    """Template slots for one document, kept for query generation."""

    doc_id: str
    kind: str  # "incident" | "manual"
    site: str
    component: str
    failure: str = ""
    observation: str = ""
    root_cause: str = ""
    remedy: str = ""
    shift: str = ""
    period: str = ""
    event_kind: str = ""
    event_count: int = 0
    downtime_hours: int = 0
    person: str = ""
    org: str = ""
    email: str = ""
    phone: str = ""
    address: str = ""
    part_number: str = ""
    incident_phrase: str = ""


class _DocBuilder:
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        self._parts: List[str] = []
        self._length = 0
        self.secrets: List[PlantedSecret] = []

    def add(self, text: str) -> None:
        self._parts.append(text)
        self._length += len(text)

    def add_secret(self, literal: str, category: SensitivityTag) -> None:
        start = self._length
        self.add(literal)
        self.secrets.append(
            PlantedSecret(
                literal=literal,
                category=category,
                doc_id=self.doc_id,
                char_range=(start, start + len(literal)),
            )
        )

    def body(self) -> str:
        return "".join(self._parts)


def _slug(text: str) -> str:
    return text.lower().replace(" ", "-")


def _make_email(person: str, org: str) -> str:
    return f"{person.lower().replace(' ', '.')}@{_slug(org)}.example"


def _make_phone(rnd: random.Random) -> str:
    return f"+{rnd.randint(20, 99)} {rnd.randint(100, 999)} {rnd.randint(1000000, 9999999)}"


def _make_part_number(rnd: random.Random) -> str:
    letters = "".join(rnd.choice("ABCDEFGHJKLMNPRSTVWXZ") for _ in range(rnd.randint(2, 3)))
    return f"{letters}-{rnd.randint(10000, 99999)}"


def _build_incident(builder: _DocBuilder, facts: DocFacts, rnd: random.Random) -> None:
    b = builder
    f = facts
    b.add(f"# Report {b.doc_id}: {f.component} anomaly at {f.site}\n\n")
    b.add("## Technical Analysis\n\n")
    b.add(
        f"The {f.component} at {f.site} exhibited {f.failure} "
        f"during {f.shift} operations. "
    )
    b.add(f"Inspection of the assembly revealed {f.observation}. ")
    b.add(f"The likely root cause was {f.root_cause}. ")
    b.add(rnd.choice(_ANALYSIS_FILLER) + " ")
    b.add(
        f"Maintenance recommended {f.remedy} for the {f.component} "
        "before the next production cycle.\n\n"
    )
    b.add("## Log Summary\n\n")
    b.add(
        f"A total of {f.event_count} {f.event_kind} events were recorded "
        f"at {f.site} during {f.period}. "
    )
    b.add(
        f"Cumulative downtime attributed to the fault reached "
        f"{f.downtime_hours} hours across the reporting window. "
    )
    b.add(" ".join(rnd.sample(_LOG_FILLER, 4)) + "\n\n")
    b.add("## Personnel and Contacts\n\n")
    b.add(f"The incident at {f.site} was reported by ")
    b.add_secret(f.person, SensitivityTag.PII_PERSON_NAME)
    b.add(" of ")
    b.add_secret(f.org, SensitivityTag.ID_ORG)
    b.add(". Reach the responsible engineer at ")
    b.add_secret(f.email, SensitivityTag.PII_EMAIL)
    b.add(" or by phone at ")
    b.add_secret(f.phone, SensitivityTag.PII_PHONE)
    b.add(". Written correspondence goes to ")
    b.add_secret(f.address, SensitivityTag.PII_ADDRESS)
    b.add(". The affected assembly uses part ")
    b.add_secret(f.part_number, SensitivityTag.ID_PART_NUMBER)
    b.add(". Review classified the event as ")
    b.add_secret(f.incident_phrase, SensitivityTag.NARRATIVE_INCIDENT)
    b.add(
        ". Contact requests should quote the report number and reach the duty "
        "engineer by email or phone. The engineer on call answers contact "
        "emails during every shift, and the phone line stays staffed around "
        "the clock.\n"
    )


def _build_manual(builder: _DocBuilder, facts: DocFacts, rnd: random.Random) -> None:
    b = builder
    f = facts
    b.add(f"# Manual Section {b.doc_id}: servicing the {f.component}\n\n")
    b.add("## Procedure\n\n")
    b.add(
        f"Isolate the {f.component} before any inspection and verify that "
        "no stored pressure remains in the circuit. "
    )
    b.add(
        "Replace the wear ring whenever the measured clearance exceeds the "
        "service limit printed on the data plate. "
    )
    b.add(rnd.choice(_PROCEDURE_FILLER) + " ")
    b.add(rnd.choice(_PROCEDURE_FILLER) + " ")
    b.add(
        "Torque the retaining bolts to specification and record the values "
        "in the service log.\n\n"
    )
    b.add("## Inventory Note\n\n")
    b.add(f"Replacement kits for the {f.component} use part ")
    b.add_secret(f.part_number, SensitivityTag.ID_PART_NUMBER)
    b.add(f" and are stocked at {f.site}.\n")


def generate_corpus(seed: int, size: int) -> SeededCorpus:
    """Deterministic corpus of `size` documents with recorded plants."""
    if size < 1:
        raise ValueError("size must be at least 1")
    rnd = random.Random(seed)
    documents = []
    secrets: List[PlantedSecret] = []
    facts_by_doc: dict = {}

    used_names: set = set()
    for i in range(size):
        kind = "manual" if i % 4 == 3 else "incident"
        doc_id = f"doc-{i:03d}"
        site = _SITES[i % len(_SITES)]
        # Offset the component cycle so (site, component) pairs stay unique.
        component = _COMPONENTS[(i + i // len(_SITES)) % len(_COMPONENTS)]
        facts = DocFacts(doc_id=doc_id, kind=kind, site=site, component=component)
        builder = _DocBuilder(doc_id)
        if kind == "incident":
            while True:
                person = f"{rnd.choice(_FIRST_NAMES)} {rnd.choice(_LAST_NAMES)}"
                if person not in used_names:
                    used_names.add(person)
                    break
            facts.failure = rnd.choice(_FAILURES)
            facts.observation = rnd.choice(_OBSERVATIONS)
            facts.root_cause = rnd.choice(_ROOT_CAUSES)
            facts.remedy = rnd.choice(_REMEDIES)
            facts.shift = rnd.choice(_SHIFTS)
            # Deterministic cycles keep (site, event kind, period) triples
            # unique, so aggregation questions have a single gold sentence.
            facts.period = _PERIODS[(i + i // len(_PERIODS)) % len(_PERIODS)]
            facts.event_kind = _EVENT_KINDS[i % len(_EVENT_KINDS)]
            facts.event_count = rnd.randint(2, 9)
            facts.downtime_hours = rnd.randint(3, 48)
            facts.person = person
            facts.org = rnd.choice(_ORGS)
            facts.email = _make_email(person, facts.org)
            facts.phone = _make_phone(rnd)
            facts.address = rnd.choice(_STREETS)
            facts.part_number = _make_part_number(rnd)
            facts.incident_phrase = rnd.choice(_INCIDENT_PHRASES)
            _build_incident(builder, facts, rnd)
        else:
            facts.part_number = _make_part_number(rnd)
            _build_manual(builder, facts, rnd)
        body = builder.body()
        documents.append(
            DocumentSource(
                doc_id=doc_id,
                asset_id=ASSET_ID,
                provider_id=PROVIDER_ID,
                title=body.splitlines()[0].lstrip("# "),
                body=body,
            )
        )
        secrets.extend(builder.secrets)
        facts_by_doc[doc_id] = facts

    gazetteer = {
        SensitivityTag.PII_PERSON_NAME.value: sorted(
            {s.literal for s in secrets if s.category is SensitivityTag.PII_PERSON_NAME}
        ),
        SensitivityTag.PII_ADDRESS.value: sorted(
            {s.literal for s in secrets if s.category is SensitivityTag.PII_ADDRESS}
        ),
        SensitivityTag.ID_ORG.value: sorted(
            {s.literal for s in secrets if s.category is SensitivityTag.ID_ORG}
        ),
        SensitivityTag.NARRATIVE_INCIDENT.value: sorted(
            {s.literal for s in secrets if s.category is SensitivityTag.NARRATIVE_INCIDENT}
        ),
    }
    corpus = SeededCorpus(
        documents=tuple(documents),
        planted_secrets=tuple(secrets),
        gazetteer=gazetteer,
        facts=facts_by_doc,
    )
    # Generation-time self-check: every recorded range holds its literal.
    for secret in corpus.planted_secrets:
        doc = next(d for d in corpus.documents if d.doc_id == secret.doc_id)
        start, end = secret.char_range
        assert doc.body[start:end] == secret.literal
    return corpus
