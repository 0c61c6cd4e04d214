import json
import tempfile
from pathlib import Path

from genrelyrics.cli import main
from genrelyrics.data import synth_corpus

"""
The four commands, end to end
"""
# The same steps from a shell:
#   genrelyrics prepare corpus/manifest.jsonl --outdir prep --vocab-size 64
#   genrelyrics train tiny.cfg --outdir run
#   genrelyrics transcribe --checkpoint run/averaged.ckpt --prepared prep --manifest corpus/manifest.jsonl --output hyp.jsonl
#   genrelyrics score --hyp hyp.jsonl --ref corpus/manifest.jsonl
work = Path(tempfile.mkdtemp())
manifest, _ = synth_corpus(0, 10, work / "corpus")
print(open(manifest).readline().strip())

main(["prepare", str(manifest), "--outdir", str(work / "prep"), "--vocab-size", "64"])
main(["prepare", str(manifest), "--outdir", str(work / "prep"), "--vocab-size", "64"])   # cache hit

(work / "tiny.cfg").write_text("""[data]
prepared = prep
[model]
d_model = 32
heads = 4
ffn_dim = 64
n_enc = 2
m_dec = 2
adapter_dim = 16
dropout = 0.0
[train]
warmup = 200
lr_scale = 0.5
epochs = 150
max_bins = 30000
""")
# about half a minute on one core: the ten lines are memorised completely
main(["train", str(work / "tiny.cfg"), "--outdir", str(work / "run")])
main(["transcribe", "--checkpoint", str(work / "run" / "averaged.ckpt"), "--prepared", str(work / "prep"),
      "--manifest", str(manifest), "--output", str(work / "hyp.jsonl")])
print(open(work / "hyp.jsonl").readline().strip())
main(["score", "--hyp", str(work / "hyp.jsonl"), "--ref", str(manifest), "--json", str(work / "score.json")])

"""
Exit codes
"""
print("vocabulary too small ->", main(["prepare", str(manifest), "--outdir", str(work / "p2"), "--vocab-size", "4"]))
print("adapter phase without a base ->",
      main(["train", str(work / "tiny.cfg"), "--phase", "adapter", "--placement", "mha", "--outdir", str(work / "x")]))
print(json.loads((work / "score.json").read_text())["overall"])
