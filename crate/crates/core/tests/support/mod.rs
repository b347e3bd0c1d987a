#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use navcot::env::synth::{gen_synthetic_world, SyntheticConfig, SyntheticWorld};
use navcot::env::World;
use navcot::export::query_options;
use navcot::labels::{
    label_dataset, CaptionMatchSimilarity, CoTLabel, LabelOptions, LandmarkCache, LandmarkList,
};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub struct Fixture {
    pub synth: SyntheticWorld,
    pub world: World,
    pub labels: Vec<CoTLabel>,
}

pub fn world_of(synth: &SyntheticWorld) -> World {
    let mut graphs = BTreeMap::new();
    graphs.insert(synth.scan.clone(), synth.graph.clone());
    World::new(graphs, synth.captions.clone())
}

pub fn planted_cache(synth: &SyntheticWorld) -> LandmarkCache {
    let mut cache = LandmarkCache::new();
    for (ep, lms) in &synth.episode_landmarks {
        cache.insert(LandmarkList::new(ep.clone(), lms.iter().cloned()));
    }
    cache
}

/// Synthetic world labeled with its planted landmarks and exact caption matching.
pub fn fixture(seed: u64, n: usize, branching: usize, episodes: usize) -> Fixture {
    let synth =
        gen_synthetic_world(&SyntheticConfig::new(seed, n, branching).with_episodes(episodes))
            .expect("synthetic world");
    let world = world_of(&synth);
    let report = label_dataset(
        &synth.episodes,
        &world,
        &planted_cache(&synth),
        &CaptionMatchSimilarity,
        &LabelOptions::default(),
    )
    .expect("labels");
    Fixture {
        synth,
        world,
        labels: report.labels,
    }
}

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Reply {
    pub fn json(status: u16, body: Value) -> Self {
        Self {
            status,
            headers: Vec::new(),
            body: body.to_string(),
        }
    }
}

pub struct Request {
    /// Zero-based arrival order across the server's lifetime.
    pub index: usize,
    pub authorization: Option<String>,
    pub body: String,
}

/// Minimal HTTP/1.1 endpoint on an ephemeral port; one thread per connection.
pub struct MockServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&Request) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let hits = Arc::new(AtomicUsize::new(0));
        let handler = Arc::new(handler);
        let counter = Arc::clone(&hits);
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let handler = Arc::clone(&handler);
                let counter = Arc::clone(&counter);
                thread::spawn(move || serve(stream, &*handler, &counter));
            }
        });
        Self { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(
    stream: TcpStream,
    handler: &(dyn Fn(&Request) -> Reply + Send + Sync),
    hits: &AtomicUsize,
) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut length = 0usize;
    let mut authorization = None;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some((name, value)) = trimmed.split_once(':') {
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().unwrap_or(0),
                "authorization" => authorization = Some(value.trim().to_owned()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let request = Request {
        index: hits.fetch_add(1, Ordering::SeqCst),
        authorization,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let reply = handler(&request);
    let mut out = format!(
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        reply.status,
        reply.body.len()
    );
    for (k, v) in &reply.headers {
        out.push_str(&format!("{k}: {v}\r\n"));
    }
    out.push_str("\r\n");
    out.push_str(&reply.body);
    let mut stream = stream;
    let _ = stream.write_all(out.as_bytes());
    let _ = stream.flush();
}

pub fn prompt_of(body: &str) -> String {
    let v: Value = serde_json::from_str(body).expect("json body");
    v["messages"][0]["content"]
        .as_str()
        .unwrap_or_default()
        .to_owned()
}

/// Deterministic chat reply: the option is picked from a hash of the prompt.
pub fn hashed_reasoner(req: &Request) -> Reply {
    let prompt = prompt_of(&req.body);
    let options = query_options(&prompt);
    if options.is_empty() {
        return chat_reply("pong");
    }
    let digest = Sha256::digest(prompt.as_bytes());
    let pick = options[digest[0] as usize % options.len()];
    chat_reply(&format!(
        "Imagination: something. Filtered observation: {pick} matches the imagination. Action: {pick}."
    ))
}

pub fn chat_reply(text: &str) -> Reply {
    Reply::json(
        200,
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}),
    )
}
