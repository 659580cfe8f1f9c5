#!/usr/bin/env python3
"""Regenerates the committed ingestion fixtures under fixtures/.

Output is deterministic for a given seed; rerunning overwrites the files.
"""
import json
import os
import random
from xml.sax.saxutils import escape

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures")

TOPICS = {
    "airbag": ["airbag", "inflator", "occupant", "collision", "restraint", "deployment",
               "cushion", "vehicle", "crash", "sensor", "seatbelt", "impact"],
    "battery": ["lithium", "electrode", "cathode", "anode", "electrolyte", "battery",
                "charge", "capacity", "cell", "separator", "ion", "thermal"],
    "neural": ["neural", "network", "training", "gradient", "layer", "attention",
               "transformer", "embedding", "classification", "dataset", "model", "loss"],
    "crispr": ["crispr", "genome", "editing", "guide", "rna", "cas9", "sequence",
               "mutation", "cell", "protein", "delivery", "therapy"],
    "solar": ["solar", "photovoltaic", "perovskite", "efficiency", "absorber", "module",
              "silicon", "irradiance", "junction", "panel", "conversion", "film"],
    "catalysis": ["catalyst", "hydrogen", "reaction", "surface", "oxide", "platinum",
                  "electrochemical", "selectivity", "yield", "synthesis", "ammonia", "kinetics"],
}

FILLER = ["improved", "method", "system", "apparatus", "novel", "efficient", "robust",
          "analysis", "design", "evaluation", "performance", "control", "structure",
          "process", "approach", "framework", "measurement", "optimization"]

JOURNALS = ["Journal of Applied Physics", "Nature Energy", "Neural Computation",
            "Cell Reports", "Vehicle System Dynamics", "ACS Catalysis"]

SURNAMES = ["Meyer", "Okafor", "Tanaka", "Silva", "Novak", "Haddad", "Larsen", "Ivanova",
            "Chen", "Rossi", "Kowalski", "Nguyen"]

CPC = {"airbag": "B60R 21/231", "battery": "H01M 10/0525", "neural": "G06N 3/08",
       "crispr": "C12N 15/113", "solar": "H01L 31/18", "catalysis": "B01J 23/42"}


def sentence(rng, topic, n):
    words = [rng.choice(TOPICS[topic]) if rng.random() < 0.6 else rng.choice(FILLER)
             for _ in range(n)]
    return " ".join(words).capitalize() + "."


def title(rng, topic):
    words = rng.sample(TOPICS[topic], 3) + [rng.choice(FILLER)]
    rng.shuffle(words)
    return " ".join(words).capitalize()


def abstract(rng, topic, uniq):
    parts = [sentence(rng, topic, rng.randint(8, 16)) for _ in range(rng.randint(3, 5))]
    parts.append(f"Reference token {uniq}.")
    return " ".join(parts)


def publication(rng, i, topic):
    year = rng.randint(2005, 2022)
    return {
        "id": f"S2-{100000 + i}",
        "title": title(rng, topic),
        "abstract": abstract(rng, topic, f"pub{i:03d}"),
        "year": year,
        "journal": rng.choice(JOURNALS),
        "doi": f"10.{1000 + i}/millstone.{year}.{i:04d}",
        "authors": [f"{rng.choice('ABCDEFGHJKLMNPRST')}. {rng.choice(SURNAMES)}"
                    for _ in range(rng.randint(1, 4))],
    }


def patent_xml(number, country, kind, topic, ttl, abst, claims, description, rng,
               pub_date=None):
    pub_date = pub_date or f"{rng.randint(2010, 2022)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"
    out = ['<?xml version="1.0" encoding="UTF-8"?>', "<patent-document>"]
    out.append(f"  <publication-number>{number}</publication-number>")
    out.append(f"  <country>{country}</country>")
    out.append(f"  <kind>{kind}</kind>")
    out.append(f"  <publication-date>{pub_date}</publication-date>")
    out.append("  <classifications>")
    out.append(f"    <classification>{CPC[topic]}</classification>")
    out.append("  </classifications>")
    out.append("  <applicants>")
    out.append(f"    <applicant>{rng.choice(SURNAMES)} Industries</applicant>")
    out.append("  </applicants>")
    if ttl is not None:
        out.append(f'  <title lang="en">{escape(ttl)}</title>')
    if abst is not None:
        out.append(f"  <abstract>{escape(abst)}</abstract>")
    if claims:
        out.append("  <claims>")
        for n, c in enumerate(claims, 1):
            out.append(f'    <claim num="{n}">{escape(c)}</claim>')
        out.append("  </claims>")
    if description:
        out.append("  <description>")
        for p in description:
            out.append(f"    <p>{escape(p)}</p>")
        out.append("  </description>")
    out.append("</patent-document>")
    return "\n".join(out) + "\n"


def write(path, text):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def mixed100(rng):
    base = os.path.join(ROOT, "mixed100")
    topics = list(TOPICS)
    pubs = [publication(rng, i, topics[i % len(topics)]) for i in range(70)]
    for shard in range(2):
        lines = [json.dumps(p) for p in pubs[shard * 35:(shard + 1) * 35]]
        write(os.path.join(base, "publications", f"part-{shard:04d}.jsonl"), "\n".join(lines) + "\n")

    offices = [("epo", "EP", "B1", 12), ("uspto", "US", "A1", 10), ("wipo", "WO", "A1", 8)]
    for corpus, country, kind, count in offices:
        for i in range(count):
            topic = topics[(i + len(corpus)) % len(topics)]
            if corpus == "epo" and i == 0:
                number = "EP19164094B1"
                topic = "airbag"
                ttl = "Airbags"
                abst = ("Airbags are inflatable occupant restraint cushions that deploy on "
                        "impact to protect vehicle occupants in a crash.")
            elif corpus == "uspto" and i == 0:
                number = "20130226771"
                ttl = title(rng, topic)
                abst = abstract(rng, topic, f"{corpus}{i:03d}")
            else:
                number = f"{country}{rng.randint(10_000_000, 99_999_999)}{kind}"
                ttl = title(rng, topic)
                abst = abstract(rng, topic, f"{corpus}{i:03d}")
            claims = [sentence(rng, topic, 14) for _ in range(2)]
            desc = [sentence(rng, topic, 20) for _ in range(2)]
            write(os.path.join(base, "patents", corpus, f"{number}.xml"),
                  patent_xml(number, country, kind, topic, ttl, abst, claims, desc, rng))


def dirty(rng):
    base = os.path.join(ROOT, "dirty")
    topics = list(TOPICS)
    lines = []
    for i in range(10):
        if i in (2, 6):
            lines.append('{"id": "S2-broken-%d", "title": "Unterminated' % i)
        elif i == 8:
            lines.append(json.dumps({"id": "S2-notext", "year": 2019, "journal": "Empty"}))
        else:
            lines.append(json.dumps(publication(rng, 500 + i, topics[i % len(topics)])))
    write(os.path.join(base, "publications", "dirty.jsonl"), "\n".join(lines) + "\n")

    pat = os.path.join(base, "patents")
    write(os.path.join(pat, "EP30000001A1.xml"),
          patent_xml("EP30000001A1", "EP", "A1", "solar", None, None,
                     [sentence(rng, "solar", 12)], None, rng))
    write(os.path.join(pat, "EP30000002A1.xml"),
          patent_xml("EP30000002A1", "EP", "A1", "battery", title(rng, "battery"),
                     abstract(rng, "battery", "dirty002"), None, None, rng))
    write(os.path.join(pat, "EP30000003A1.xml"),
          '<?xml version="1.0"?>\n<patent-document>\n  <publication-number>EP30000003A1'
          '</publication-number>\n  <title>Unclosed\n')


def main():
    rng = random.Random(20230607)
    mixed100(rng)
    dirty(rng)


if __name__ == "__main__":
    main()
