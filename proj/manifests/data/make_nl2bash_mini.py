"""Regenerates nl2bash_mini.tsv: 400 templated (description, command) pairs."""
import random

random.seed(7)
dirs = ["src", "logs", "docs", "build", "tmp", "home", "data", "etc"]
files = ["notes.txt", "access.log", "main.c", "report.csv", "config.yaml", "readme.md", "data.json", "app.py"]
words = ["error", "warning", "todo", "main", "user", "timeout", "failed", "import"]
names = ["*.py", "*.log", "*.txt", "*.c", "*.md", "*.json"]
nums = ["5", "10", "20", "50", "100"]
T = [
    ("list all files in {d} including hidden ones", "ls -a {d}"),
    ("list files in {d} in long format", "ls -l {d}"),
    ("list files in {d} sorted by size", "ls -S {d}"),
    ("list files in {d} sorted by modification time", "ls -t {d}"),
    ("find files named {n} under {d}", "find {d} -name {n}"),
    ("find regular files under {d}", "find {d} -type f"),
    ("find directories under {d}", "find {d} -type d"),
    ("delete empty files under {d}", "find {d} -type f -empty -delete"),
    ("find files under {d} modified in the last {k} days", "find {d} -mtime -{k}"),
    ("count lines in {f}", "wc -l {f}"),
    ("count words in {f}", "wc -w {f}"),
    ("show the first {k} lines of {f}", "head -n {k} {f}"),
    ("show the last {k} lines of {f}", "tail -n {k} {f}"),
    ("follow the end of {f}", "tail -f {f}"),
    ("search for {w} in {f}", "grep {w} {f}"),
    ("search for {w} in {f} ignoring case", "grep -i {w} {f}"),
    ("search for {w} recursively in {d}", "grep -r {w} {d}"),
    ("count lines containing {w} in {f}", "grep -c {w} {f}"),
    ("show lines of {f} that do not contain {w}", "grep -v {w} {f}"),
    ("sort {f} numerically", "sort -n {f}"),
    ("sort {f} in reverse order", "sort -r {f}"),
    ("show unique lines of {f}", "sort {f} | uniq"),
    ("count occurrences of each line in {f}", "sort {f} | uniq -c"),
    ("show disk usage of {d} in human readable form", "du -sh {d}"),
    ("compress {d} into an archive", "tar -czf {d}.tar.gz {d}"),
    ("extract the archive {d}.tar.gz", "tar -xzf {d}.tar.gz"),
    ("copy {d} recursively to backup", "cp -r {d} backup"),
    ("remove {d} and everything in it", "rm -rf {d}"),
    ("create the directory {d} with parents", "mkdir -p {d}"),
    ("count files in {d}", "ls {d} | wc -l"),
    ("find lines with {w} in {n} files under {d}", "find {d} -name {n} | xargs grep {w}"),
    ("show the {k} largest files in {d}", "du -a {d} | sort -n -r | head -n {k}"),
]

seen = set()
out = []
while len(out) < 400:
    nl, sh = random.choice(T)
    v = dict(d=random.choice(dirs), f=random.choice(files), w=random.choice(words), n=random.choice(names),
             k=random.choice(nums))
    pair = (nl.format(**v), sh.format(**v))
    if pair in seen:
        continue
    seen.add(pair)
    out.append(pair)

with open("nl2bash_mini.tsv", "w") as f:
    for a, b in out:
        f.write(f"{a}\t{b}\n")
