use super::cache::{CacheEntry, CacheError, ScoreCache};
use super::parse::{parse_answer, AnswerError};
use super::provider::{CompletionProvider, ProviderError, ScoreKey, ScoreRequest};
use super::ScoreValue;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32 << retry.saturating_sub(1).min(16))
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("cache miss and no provider available (cache-only mode)")]
    CacheMiss,
    #[error("provider failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: ProviderError },
    #[error("provider error: {0}")]
    Provider(ProviderError),
    #[error("unparseable answer: {0}")]
    Parse(AnswerError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

#[derive(Debug, Default)]
struct Counters {
    cache_hits: AtomicU64,
    provider_calls: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub cache_hits: u64,
    pub provider_calls: u64,
    pub retries: u64,
    pub failures: u64,
}

/// Cache-first scoring against an optional provider. With no provider the
/// scorer runs in cache-only mode and every miss is an error.
pub struct Scorer<'a> {
    provider: Option<&'a dyn CompletionProvider>,
    cache: Option<&'a ScoreCache>,
    model_name: String,
    retry: RetryPolicy,
    counters: Counters,
}

impl<'a> Scorer<'a> {
    pub fn new(provider: &'a dyn CompletionProvider) -> Self {
        Self {
            model_name: provider.model_name().to_string(),
            provider: Some(provider),
            cache: None,
            retry: RetryPolicy::default(),
            counters: Counters::default(),
        }
    }

    pub fn cache_only(cache: &'a ScoreCache, model_name: &str) -> Self {
        Self {
            provider: None,
            cache: Some(cache),
            model_name: model_name.to_string(),
            retry: RetryPolicy::default(),
            counters: Counters::default(),
        }
    }

    pub fn with_cache(mut self, cache: &'a ScoreCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn stats(&self) -> ScoreStats {
        ScoreStats {
            cache_hits: self.counters.cache_hits.load(Ordering::Relaxed),
            provider_calls: self.counters.provider_calls.load(Ordering::Relaxed),
            retries: self.counters.retries.load(Ordering::Relaxed),
            failures: self.counters.failures.load(Ordering::Relaxed),
        }
    }

    /// Score one prompt: cache lookup by `(content_hash, model_name)`, then on
    /// a miss one provider call (plus retries on transient failures), parse,
    /// and persist.
    pub fn score_prompt(&self, request: &ScoreRequest) -> Result<ScoreValue, ScoreError> {
        let result = self.score_uncounted(request);
        if result.is_err() {
            self.counters.failures.fetch_add(1, Ordering::Relaxed);
        }
        result
    }

    fn score_uncounted(&self, request: &ScoreRequest) -> Result<ScoreValue, ScoreError> {
        let hash = &request.prompt.content_hash;
        if let Some(hit) = self.cache.and_then(|c| c.get(hash, &self.model_name)) {
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.score);
        }
        let provider = self.provider.ok_or(ScoreError::CacheMiss)?;
        let raw = self.call_with_retries(provider, request)?;
        let score = parse_answer(&raw).map_err(ScoreError::Parse)?;
        if let Some(cache) = self.cache {
            cache.insert(CacheEntry {
                content_hash: hash.clone(),
                model_name: self.model_name.clone(),
                score,
                raw_response: raw,
                retrieved_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            })?;
        }
        Ok(score)
    }

    fn call_with_retries(
        &self,
        provider: &dyn CompletionProvider,
        request: &ScoreRequest,
    ) -> Result<String, ScoreError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.counters.provider_calls.fetch_add(1, Ordering::Relaxed);
            match provider.complete(request) {
                Ok(text) => {
                    if attempt > 1 {
                        log::info!(
                            "{} {} {}: succeeded after {} retries",
                            request.key.firm_id,
                            request.key.period,
                            request.key.regime,
                            attempt - 1
                        );
                    }
                    return Ok(text);
                }
                Err(e) if e.is_retryable() && attempt <= self.retry.max_retries => {
                    let delay = self.retry.delay(attempt);
                    log::warn!(
                        "{} {} {}: attempt {attempt} failed ({e}); retrying in {delay:?}",
                        request.key.firm_id,
                        request.key.period,
                        request.key.regime
                    );
                    self.counters.retries.fetch_add(1, Ordering::Relaxed);
                    thread::sleep(delay);
                }
                Err(e) if e.is_retryable() => {
                    return Err(ScoreError::Exhausted { attempts: attempt, last: e })
                }
                Err(e) => return Err(ScoreError::Provider(e)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScoreOutcome {
    Scored { value: ScoreValue },
    /// Explicit missing marker; the firm-period is dropped downstream.
    Missing { reason: String },
}

impl ScoreOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            ScoreOutcome::Scored { value } => Some(value.get()),
            ScoreOutcome::Missing { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub key: ScoreKey,
    pub content_hash: String,
    pub outcome: ScoreOutcome,
}

/// Scores in request order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScorePanel {
    pub model_name: String,
    pub entries: Vec<ScoreEntry>,
}

impl ScorePanel {
    pub fn missing(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.outcome, ScoreOutcome::Missing { .. }))
            .count()
    }
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("no prompts to score")]
    Empty,
    #[error("all {count} prompts failed; first error: {first}")]
    AllFailed { count: usize, first: String },
}

/// Score every request with at most `max_parallel` in flight. Output order
/// matches input order. Individual failures become missing markers; the batch
/// fails only when nothing could be scored.
pub fn batch_score(
    scorer: &Scorer<'_>,
    requests: &[ScoreRequest],
    max_parallel: usize,
) -> Result<ScorePanel, BatchError> {
    if requests.is_empty() {
        return Err(BatchError::Empty);
    }
    let workers = max_parallel.max(1).min(requests.len());
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<ScoreOutcome>> = vec![None; requests.len()];

    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(req) = requests.get(i) else { break };
                        let outcome = match scorer.score_prompt(req) {
                            Ok(value) => ScoreOutcome::Scored { value },
                            Err(e) => ScoreOutcome::Missing { reason: e.to_string() },
                        };
                        done.push((i, outcome));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (i, outcome) in h.join().expect("scoring worker panicked") {
                slots[i] = Some(outcome);
            }
        }
    });

    let entries: Vec<ScoreEntry> = requests
        .iter()
        .zip(slots)
        .map(|(req, outcome)| ScoreEntry {
            key: req.key.clone(),
            content_hash: req.prompt.content_hash.clone(),
            outcome: outcome.expect("every request scored"),
        })
        .collect();
    if entries.iter().all(|e| e.outcome.value().is_none()) {
        let first = match &entries[0].outcome {
            ScoreOutcome::Missing { reason } => reason.clone(),
            ScoreOutcome::Scored { .. } => unreachable!(),
        };
        return Err(BatchError::AllFailed {
            count: entries.len(),
            first,
        });
    }
    Ok(ScorePanel {
        model_name: scorer.model_name().to_string(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::period::Period;
    use crate::prompting::{render_prompt, Regime, TaskKind};
    use chrono::NaiveDate;
    use std::sync::Mutex;

    fn request(i: usize) -> ScoreRequest {
        let prompt = render_prompt(
            TaskKind::SentimentReturn,
            Regime::GoalBlind,
            "ABC",
            NaiveDate::from_ymd_opt(2023, 3, 31).unwrap(),
            &format!("transcript {i}"),
        )
        .unwrap();
        ScoreRequest {
            key: ScoreKey {
                firm_id: format!("F{i}"),
                period: Period::month(2023, 3),
                regime: Regime::GoalBlind,
            },
            prompt,
        }
    }

    /// Returns queued responses per call; tracks concurrency.
    struct Scripted {
        script: Mutex<Vec<Result<String, ProviderError>>>,
        calls: AtomicUsize,
    }

    impl CompletionProvider for Scripted {
        fn model_name(&self) -> &str {
            "scripted"
        }
        fn complete(&self, _: &ScoreRequest) -> Result<String, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.script.lock().unwrap().remove(0)
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_retries: 2,
            backoff_base: Duration::from_millis(1),
        }
    }

    #[test]
    fn cache_hit_makes_no_call() {
        let provider = Scripted {
            script: Mutex::new(vec![]),
            calls: AtomicUsize::new(0),
        };
        let cache = ScoreCache::in_memory();
        let req = request(0);
        cache
            .insert(CacheEntry {
                content_hash: req.prompt.content_hash.clone(),
                model_name: "scripted".into(),
                score: ScoreValue::new(0.4).unwrap(),
                raw_response: "{\"answer\": 0.4}".into(),
                retrieved_at: "t".into(),
            })
            .unwrap();
        let scorer = Scorer::new(&provider).with_cache(&cache);
        assert_eq!(scorer.score_prompt(&req).unwrap().get(), 0.4);
        assert_eq!(provider.calls.load(Ordering::SeqCst), 0);
        assert_eq!(scorer.stats().cache_hits, 1);
    }

    #[test]
    fn transient_failure_then_success_is_retried_and_cached() {
        let provider = Scripted {
            script: Mutex::new(vec![
                Err(ProviderError::RateLimited(429)),
                Ok("{\"answer\": -0.2}".into()),
            ]),
            calls: AtomicUsize::new(0),
        };
        let cache = ScoreCache::in_memory();
        let scorer = Scorer::new(&provider).with_cache(&cache).with_retry(fast());
        let req = request(1);
        assert_eq!(scorer.score_prompt(&req).unwrap().get(), -0.2);
        assert_eq!(scorer.stats().retries, 1);
        assert_eq!(provider.calls.load(Ordering::SeqCst), 2);
        let entry = cache.get(&req.prompt.content_hash, "scripted").unwrap();
        assert_eq!(entry.raw_response, "{\"answer\": -0.2}");
    }

    #[test]
    fn retries_exhaust() {
        let provider = Scripted {
            script: Mutex::new(vec![Err(ProviderError::Transport("down".into())); 3]),
            calls: AtomicUsize::new(0),
        };
        let scorer = Scorer::new(&provider).with_retry(fast());
        let err = scorer.score_prompt(&request(2)).unwrap_err();
        assert!(matches!(err, ScoreError::Exhausted { attempts: 3, .. }), "{err}");
    }

    #[test]
    fn permanent_errors_not_retried() {
        let provider = Scripted {
            script: Mutex::new(vec![Ok("{\"answer\": \"0.3\"}".into())]),
            calls: AtomicUsize::new(0),
        };
        let scorer = Scorer::new(&provider).with_retry(fast());
        let err = scorer.score_prompt(&request(3)).unwrap_err();
        assert!(matches!(err, ScoreError::Parse(AnswerError::StringAnswer)));
        assert_eq!(provider.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn parse_failure_becomes_missing_marker() {
        let provider = Scripted {
            script: Mutex::new(vec![Ok("{\"answer\": 0.5}".into()), Ok("no idea".into())]),
            calls: AtomicUsize::new(0),
        };
        let scorer = Scorer::new(&provider);
        let panel = batch_score(&scorer, &[request(0), request(1)], 1).unwrap();
        assert_eq!(panel.entries[0].outcome.value(), Some(0.5));
        assert!(matches!(panel.entries[1].outcome, ScoreOutcome::Missing { .. }));
        assert_eq!(panel.missing(), 1);
    }

    #[test]
    fn cache_only_cold_cache_fails_batch() {
        let cache = ScoreCache::in_memory();
        let scorer = Scorer::cache_only(&cache, "m");
        let err = batch_score(&scorer, &[request(0)], 2).unwrap_err();
        assert!(matches!(err, BatchError::AllFailed { count: 1, .. }));
        assert!(matches!(batch_score(&scorer, &[], 2), Err(BatchError::Empty)));
    }
}
