//! Helpers shared by the integration test targets: brute-force metric
//! oracles, fixture paths, a one-shot HTTP server and CLI invocation.
#![allow(dead_code)]

use ontoforge::pipeline::PipelineConfig;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub const EPS: f64 = 1e-9;

/// Longest common subsequence length from the complete (n+1)×(m+1) table.
pub fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i][j] = if a[i - 1] == b[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    table[a.len()][b.len()]
}

pub fn oracle_rouge_l(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = oracle_lcs(cand, reference);
    // 2PR/(P+R) simplifies to 2·LCS/(|c|+|r|).
    2.0 * lcs as f64 / (cand.len() + reference.len()) as f64
}

/// Occurrences of `gram` in `tokens`, by scanning every position.
fn occurrences(tokens: &[String], gram: &[String]) -> usize {
    if gram.len() > tokens.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len())
        .filter(|&i| tokens[i..i + gram.len()] == *gram)
        .count()
}

/// Clipped precision for order `n`, counting each distinct candidate n-gram
/// exactly once by checking it against all earlier positions.
pub fn oracle_precision(cand: &[String], reference: &[String], n: usize) -> f64 {
    if cand.len() < n {
        return EPS;
    }
    let total = cand.len() - n + 1;
    let mut clipped = 0;
    for i in 0..total {
        let gram = &cand[i..i + n];
        let first = (0..i).all(|j| cand[j..j + n] != *gram);
        if first {
            clipped += occurrences(cand, gram).min(occurrences(reference, gram));
        }
    }
    if clipped == 0 {
        EPS
    } else {
        clipped as f64 / total as f64
    }
}

pub fn oracle_bleu_4(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let product: f64 = (1..=4).map(|n| oracle_precision(cand, reference, n)).product();
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    bp * product.powf(0.25)
}

pub fn toks(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn snomed(file: &str) -> PathBuf {
    fixture_dir().join("tiny_snomed").join(file)
}

/// Mock-backed config over the 12-concept fixture, writing to `out`.
pub fn fixture_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.ontology.concepts = Some(snomed("concepts.tsv"));
    cfg.ontology.relations = Some(snomed("relations.tsv"));
    cfg.ontology.descriptions = Some(snomed("descriptions.tsv"));
    cfg.output_dir = out.to_path_buf();
    cfg
}

pub fn write_config(dir: &Path, out: &Path, extra: &str) -> PathBuf {
    let path = dir.join("ontoforge.toml");
    let text = format!(
        "output_dir = {out:?}\n{extra}\n[ontology]\nconcepts = {:?}\nrelations = {:?}\ndescriptions = {:?}\n",
        snomed("concepts.tsv"),
        snomed("relations.tsv"),
        snomed("descriptions.tsv"),
    );
    std::fs::write(&path, text).unwrap();
    path
}

pub fn ontoforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ontoforge"))
        .args(args)
        .env_remove("ONTOFORGE_API_KEY")
        .env_remove("ONTOFORGE_BASE_URL")
        .env_remove("ONTOFORGE_MODEL")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Serves canned HTTP responses, one per connection, in order; the last
/// one repeats. Returns the base URL and a request counter.
pub fn http_server(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let i = counter.fetch_add(1, Ordering::SeqCst);
            let (status, body) = responses[i.min(responses.len() - 1)].clone();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body_in = vec![0u8; content_length];
            let _ = reader.read_exact(&mut body_in);
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (format!("http://{addr}/v1"), hits)
}
