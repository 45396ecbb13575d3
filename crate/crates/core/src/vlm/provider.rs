use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VlmError;
use crate::image::Image;

/// Default cap on concurrent requests per provider.
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// What a request is for; recorded alongside replays.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum RequestKind {
    Identify {
        prompt_index: usize,
    },
    Confidence {
        label: String,
    },
    Batch {
        prompt_index: usize,
        batch_index: usize,
        batch_count: usize,
    },
}

/// An image with the local id it stands for. Ids never leave the process.
#[derive(Clone, Copy, Debug)]
pub struct ImageRef<'a> {
    pub candidate_id: &'a str,
    pub image: &'a Image,
}

/// One earlier exchange in a multi-turn session.
#[derive(Clone, Debug)]
pub struct Turn<'a> {
    pub prompt: String,
    pub images: Vec<ImageRef<'a>>,
    pub response: String,
}

#[derive(Clone, Debug)]
pub struct VlmRequest<'a> {
    pub kind: RequestKind,
    pub prompt: String,
    pub images: Vec<ImageRef<'a>>,
    pub history: Vec<Turn<'a>>,
}

impl VlmRequest<'_> {
    /// Content hash identifying this request for a given provider.
    pub fn key(&self, provider_id: &str) -> String {
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(provider_id.as_bytes());
        field(
            serde_json::to_string(&self.kind)
                .expect("kind serializes")
                .as_bytes(),
        );
        let images = |imgs: &[ImageRef<'_>], field: &mut dyn FnMut(&[u8])| {
            field(&(imgs.len() as u64).to_le_bytes());
            for r in imgs {
                field(r.candidate_id.as_bytes());
                field(&r.image.content_hash());
            }
        };
        for turn in &self.history {
            field(turn.prompt.as_bytes());
            images(&turn.images, &mut field);
            field(turn.response.as_bytes());
        }
        field(self.prompt.as_bytes());
        images(&self.images, &mut field);
        hex::encode(h.finalize())
    }

    pub fn candidate_ids(&self) -> Vec<&str> {
        self.images.iter().map(|r| r.candidate_id).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VlmReply {
    pub text: String,
    /// Milliseconds since the unix epoch; 0 for synthetic providers.
    pub timestamp_ms: u64,
}

/// A vision-language model endpoint. Implementations must tolerate
/// concurrent `ask` calls up to `max_in_flight`.
pub trait VlmProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn ask(&self, request: &VlmRequest<'_>) -> Result<VlmReply, VlmError>;

    fn max_in_flight(&self) -> usize {
        DEFAULT_MAX_IN_FLIGHT
    }
}

impl<P: VlmProvider + ?Sized> VlmProvider for Box<P> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
    fn ask(&self, request: &VlmRequest<'_>) -> Result<VlmReply, VlmError> {
        (**self).ask(request)
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

type Script = dyn Fn(&VlmRequest<'_>) -> String + Send + Sync;

/// Deterministic provider answering from a closure; used for tests, demos
/// and for producing replay logs without a live endpoint.
pub struct ScriptedProvider {
    id: String,
    script: Box<Script>,
    max_in_flight: usize,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new(
        id: impl Into<String>,
        script: impl Fn(&VlmRequest<'_>) -> String + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.into(),
            script: Box::new(script),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    /// Number of requests answered so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl VlmProvider for ScriptedProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn ask(&self, request: &VlmRequest<'_>) -> Result<VlmReply, VlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(VlmReply {
            text: (self.script)(request),
            timestamp_ms: 0,
        })
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}

/// Runs `f` over `items` on at most `limit` threads; results keep input order.
pub(crate) fn run_bounded<T: Sync, R: Send>(
    items: &[T],
    limit: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let limit = limit.max(1).min(items.len().max(1));
    if limit == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..limit {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}
