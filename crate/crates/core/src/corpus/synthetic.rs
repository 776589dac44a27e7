//! Topic-mixture bag-of-words generator for labeled resume/vacancy pairs.
//!
//! Every language renders the same latent token ids with its own surface
//! forms, and resumes and vacancies draw topic words from disjoint latent
//! sets. A positive pair shares a latent topic, so matching it requires
//! bridging a vocabulary gap (and a language gap when languages differ).

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{Document, LabelSource, LabeledPair, Role};
use crate::error::{Error, Result};

/// Pairs per vacancy in the reference corpus (274,407 pairs over 23,080 vacancies).
const MEAN_PAIRS_PER_VACANCY: f64 = 274_407.0 / 23_080.0;

/// Consonant inventories; each language gets its own, so surface forms never collide.
const CONSONANT_GROUPS: [&str; 5] = ["bdgk", "lmnp", "rstv", "fhjw", "cqxz"];
const VOWELS: &str = "aeiou";

fn default_single_pair_fraction() -> f64 {
    0.105
}

fn default_topic_token_fraction() -> f64 {
    0.6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub n_vacancies: usize,
    pub resume_pool_size: usize,
    /// Latent token ids per language (background plus topic words).
    pub vocab_size_per_language: usize,
    pub languages: Vec<String>,
    pub n_latent_topics: usize,
    pub tokens_per_resume_mean: f64,
    pub tokens_per_vacancy_mean: f64,
    pub positive_fraction: f64,
    pub random_negative_fraction: f64,
    pub seed: u64,
    /// Total labeled pairs; defaults to the reference pairs-per-vacancy ratio.
    #[serde(default)]
    pub n_pairs: Option<usize>,
    /// Share of vacancies paired with exactly one resume.
    #[serde(default = "default_single_pair_fraction")]
    pub single_pair_vacancy_fraction: f64,
    /// Probability that a token is drawn from the document's topic words
    /// rather than the shared background words.
    #[serde(default = "default_topic_token_fraction")]
    pub topic_token_fraction: f64,
}

impl SyntheticCorpusSpec {
    /// Pair counts and label mix of the reference corpus with short documents.
    pub fn reference_shape(seed: u64) -> Self {
        Self {
            n_vacancies: 23_080,
            resume_pool_size: 156_256,
            vocab_size_per_language: 512,
            languages: vec!["nl".into(), "en".into()],
            n_latent_topics: 16,
            tokens_per_resume_mean: 2_500.0,
            tokens_per_vacancy_mean: 2_100.0,
            positive_fraction: 126_679.0 / 274_407.0,
            random_negative_fraction: 38_004.0 / 274_407.0,
            seed,
            n_pairs: Some(274_407),
            single_pair_vacancy_fraction: default_single_pair_fraction(),
            topic_token_fraction: default_topic_token_fraction(),
        }
    }

    /// 5,000 pairs with the reference label mix, short documents and 16 topics.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            n_vacancies: 420,
            resume_pool_size: 2_840,
            vocab_size_per_language: 256,
            n_latent_topics: 16,
            tokens_per_resume_mean: 24.0,
            tokens_per_vacancy_mean: 20.0,
            n_pairs: Some(5_000),
            ..Self::reference_shape(seed)
        }
    }

    pub fn total_pairs(&self) -> usize {
        let max = self.n_vacancies.saturating_mul(self.resume_pool_size);
        self.n_pairs.unwrap_or_else(|| {
            ((self.n_vacancies as f64 * MEAN_PAIRS_PER_VACANCY).round() as usize)
                .clamp(self.n_vacancies, max)
        })
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Spec(m));
        if self.n_vacancies == 0 || self.resume_pool_size == 0 {
            return err("n_vacancies and resume_pool_size must be positive".into());
        }
        if self.n_latent_topics == 0 || self.vocab_size_per_language == 0 {
            return err("n_latent_topics and vocab_size_per_language must be positive".into());
        }
        if self.languages.is_empty() {
            return err("at least one language is required".into());
        }
        if self.languages.len() > CONSONANT_GROUPS.len() {
            return err(format!(
                "at most {} languages are supported",
                CONSONANT_GROUPS.len()
            ));
        }
        let unique: HashSet<&String> = self.languages.iter().collect();
        if unique.len() != self.languages.len() {
            return err("duplicate language tags".into());
        }
        for (name, f) in [
            ("positive_fraction", self.positive_fraction),
            ("random_negative_fraction", self.random_negative_fraction),
            ("single_pair_vacancy_fraction", self.single_pair_vacancy_fraction),
            ("topic_token_fraction", self.topic_token_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return err(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if self.positive_fraction + self.random_negative_fraction > 1.0 + 1e-12 {
            return err(format!(
                "positive_fraction + random_negative_fraction = {} exceeds 1",
                self.positive_fraction + self.random_negative_fraction
            ));
        }
        if !(self.tokens_per_resume_mean >= 1.0 && self.tokens_per_vacancy_mean >= 1.0) {
            return err("token means must be at least 1".into());
        }
        let n = self.total_pairs();
        if n < self.n_vacancies {
            return err(format!("{n} pairs cannot cover {} vacancies", self.n_vacancies));
        }
        if n > self.n_vacancies.saturating_mul(self.resume_pool_size) {
            return err(format!(
                "{n} pairs exceed the {} x {} possible combinations",
                self.n_vacancies, self.resume_pool_size
            ));
        }
        Lexicon::new(self)?;
        Ok(())
    }
}

/// Latent vocabulary layout and per-language surface forms.
#[derive(Clone, Debug)]
pub struct Lexicon {
    n_languages: usize,
    n_topics: usize,
    n_background: usize,
    words_per_topic_role: usize,
    syllables_per_word: u32,
}

impl Lexicon {
    pub fn new(spec: &SyntheticCorpusSpec) -> Result<Self> {
        let v = spec.vocab_size_per_language;
        let n_background = (v / 4).max(1);
        let words_per_topic_role = v.saturating_sub(n_background) / (2 * spec.n_latent_topics);
        if words_per_topic_role == 0 {
            return Err(Error::Spec(format!(
                "vocab_size_per_language {v} too small for {} topics",
                spec.n_latent_topics
            )));
        }
        let base = 4 * VOWELS.len();
        let mut syllables = 2u32;
        while base.pow(syllables) < v {
            syllables += 1;
        }
        Ok(Self {
            n_languages: spec.languages.len(),
            n_topics: spec.n_latent_topics,
            n_background,
            words_per_topic_role,
            syllables_per_word: syllables,
        })
    }

    pub fn n_topics(&self) -> usize {
        self.n_topics
    }

    pub fn n_languages(&self) -> usize {
        self.n_languages
    }

    pub fn background_ids(&self) -> Range<usize> {
        0..self.n_background
    }

    pub fn topic_ids(&self, topic: usize, role: Role) -> Range<usize> {
        let slot = 2 * topic + usize::from(role == Role::Vacancy);
        let start = self.n_background + slot * self.words_per_topic_role;
        start..start + self.words_per_topic_role
    }

    /// Surface form of a latent id in the given language.
    pub fn surface(&self, latent: usize, language: usize) -> String {
        let consonants: Vec<char> = CONSONANT_GROUPS[language].chars().collect();
        let vowels: Vec<char> = VOWELS.chars().collect();
        let base = consonants.len() * vowels.len();
        let mut rest = latent;
        let mut word = String::with_capacity(2 * self.syllables_per_word as usize);
        for _ in 0..self.syllables_per_word {
            let syl = rest % base;
            rest /= base;
            word.push(consonants[syl / vowels.len()]);
            word.push(vowels[syl % vowels.len()]);
        }
        word
    }

    /// Draws `n` latent ids from a topic/background mixture.
    pub fn sample_tokens<R: Rng>(
        &self,
        rng: &mut R,
        topic: usize,
        role: Role,
        n: usize,
        topic_fraction: f64,
    ) -> Vec<usize> {
        let topic_range = self.topic_ids(topic, role);
        (0..n)
            .map(|_| {
                if rng.gen::<f64>() < topic_fraction {
                    rng.gen_range(topic_range.clone())
                } else {
                    rng.gen_range(self.background_ids())
                }
            })
            .collect()
    }

    /// Renders latent ids as capitalized sentences of 4 to 10 words.
    pub fn render<R: Rng>(&self, rng: &mut R, latents: &[usize], language: usize) -> String {
        let mut out = String::new();
        let mut i = 0;
        while i < latents.len() {
            let len = rng.gen_range(4..=10).min(latents.len() - i);
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&self.render_sentence(&latents[i..i + len], language));
            i += len;
        }
        out
    }

    /// One sentence: words joined by spaces, first letter capitalized, ending in a period.
    pub fn render_sentence(&self, latents: &[usize], language: usize) -> String {
        let mut s = latents
            .iter()
            .map(|&l| self.surface(l, language))
            .collect::<Vec<_>>()
            .join(" ");
        if let Some(first) = s.get(0..1) {
            let upper = first.to_ascii_uppercase();
            s.replace_range(0..1, &upper);
        }
        s.push('.');
        s
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    pub pairs: Vec<LabeledPair>,
    /// Latent topic of every generated document.
    pub topics: HashMap<String, usize>,
}

#[derive(Clone, Copy)]
enum TopicConstraint {
    Exactly(usize),
    Not(usize),
    Any,
}

struct ResumePool {
    topic: Vec<Option<usize>>,
    unused: Vec<usize>,
    by_topic: Vec<Vec<usize>>,
    n_topics: usize,
}

impl ResumePool {
    fn new<R: Rng>(size: usize, n_topics: usize, rng: &mut R) -> Self {
        let mut unused: Vec<usize> = (0..size).collect();
        unused.shuffle(rng);
        Self {
            topic: vec![None; size],
            unused,
            by_topic: vec![Vec::new(); n_topics],
            n_topics,
        }
    }

    fn assign(&mut self, resume: usize, topic: usize) {
        self.topic[resume] = Some(topic);
        self.by_topic[topic].push(resume);
    }

    fn random_topic_except<R: Rng>(&self, rng: &mut R, excluded: usize) -> usize {
        if self.n_topics == 1 {
            return 0;
        }
        let t = rng.gen_range(0..self.n_topics - 1);
        if t >= excluded {
            t + 1
        } else {
            t
        }
    }

    /// Picks a resume not yet paired with the vacancy. Unused resumes come first
    /// so that the whole pool is covered when there are enough pairs.
    fn pick<R: Rng>(
        &mut self,
        rng: &mut R,
        constraint: TopicConstraint,
        taken: &HashSet<usize>,
    ) -> Option<usize> {
        if let Some(r) = self.unused.pop() {
            let topic = match constraint {
                TopicConstraint::Exactly(t) => t,
                TopicConstraint::Not(t) => self.random_topic_except(rng, t),
                TopicConstraint::Any => rng.gen_range(0..self.n_topics),
            };
            self.assign(r, topic);
            return Some(r);
        }
        let ok = |pool: &Self, r: usize| -> bool {
            if taken.contains(&r) {
                return false;
            }
            match (&constraint, pool.topic[r]) {
                (TopicConstraint::Exactly(t), Some(rt)) => rt == *t,
                (TopicConstraint::Not(t), Some(rt)) => pool.n_topics == 1 || rt != *t,
                (TopicConstraint::Any, _) => true,
                _ => false,
            }
        };
        let candidates: &[usize] = match constraint {
            TopicConstraint::Exactly(t) => &self.by_topic[t],
            _ => &[],
        };
        for _ in 0..64 {
            let r = if candidates.is_empty() {
                rng.gen_range(0..self.topic.len())
            } else {
                candidates[rng.gen_range(0..candidates.len())]
            };
            if ok(self, r) {
                return Some(r);
            }
        }
        (0..self.topic.len()).find(|&r| ok(self, r))
    }
}

/// Pairs per vacancy: the requested share of single-pair vacancies, the rest
/// at least two with a log-normal tail, capped by the pool size.
fn allocate_pair_counts<R: Rng>(
    n_vacancies: usize,
    n_pairs: usize,
    pool: usize,
    single_fraction: f64,
    rng: &mut R,
) -> Vec<usize> {
    if n_pairs == n_vacancies || pool == 1 {
        return vec![1; n_vacancies];
    }
    let min_singles = (2 * n_vacancies).saturating_sub(n_pairs);
    let mut n_single = ((single_fraction * n_vacancies as f64).round() as usize)
        .max(min_singles)
        .min(n_vacancies - 1);
    while n_single > 0 && n_single + (n_vacancies - n_single) * pool < n_pairs {
        n_single -= 1;
    }

    let mut order: Vec<usize> = (0..n_vacancies).collect();
    order.shuffle(rng);
    let mut counts = vec![1usize; n_vacancies];
    let multi = &order[n_single..];
    let extra_total = n_pairs - n_single - 2 * multi.len();
    let cap = pool - 2;

    let tail = LogNormal::new(0.0, 1.0).expect("valid log-normal");
    let weights: Vec<f64> = multi.iter().map(|_| tail.sample(rng)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut extras: Vec<usize> = Vec::with_capacity(multi.len());
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(multi.len());
    let mut assigned = 0usize;
    for (k, w) in weights.iter().enumerate() {
        let exact = extra_total as f64 * w / wsum;
        let base = (exact.floor() as usize).min(cap);
        extras.push(base);
        assigned += base;
        remainders.push((exact - exact.floor(), k));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = extra_total - assigned;
    // Largest remainder first, then round-robin over vacancies below the cap.
    let mut cursor = 0usize;
    let mut stalled = 0usize;
    while left > 0 && stalled <= remainders.len() {
        let k = remainders[cursor % remainders.len()].1;
        if extras[k] < cap {
            extras[k] += 1;
            left -= 1;
            stalled = 0;
        } else {
            stalled += 1;
        }
        cursor += 1;
    }
    debug_assert_eq!(left, 0);
    for (&j, e) in multi.iter().zip(extras) {
        counts[j] = 2 + e;
    }
    counts
}

fn sample_length<R: Rng>(rng: &mut R, mean: f64) -> usize {
    ((mean * rng.gen_range(0.5..1.5)).round() as usize).max(1)
}

fn id_width(n: usize) -> usize {
    n.max(1).to_string().len()
}

/// Deterministic for a fixed spec (including its seed).
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let lex = Lexicon::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_vac = spec.n_vacancies;
    let pool_size = spec.resume_pool_size;
    let k = spec.n_latent_topics;
    let n_pairs = spec.total_pairs();

    let vacancy_topics: Vec<usize> = (0..n_vac).map(|_| rng.gen_range(0..k)).collect();
    let counts = allocate_pair_counts(
        n_vac,
        n_pairs,
        pool_size,
        spec.single_pair_vacancy_fraction,
        &mut rng,
    );

    let n_pos = ((spec.positive_fraction * n_pairs as f64).round() as usize).min(n_pairs);
    let n_rand =
        ((spec.random_negative_fraction * n_pairs as f64).round() as usize).min(n_pairs - n_pos);
    let n_cneg = n_pairs - n_pos - n_rand;
    let mut sources: Vec<LabelSource> = std::iter::repeat_n(LabelSource::ConsultantPositive, n_pos)
        .chain(std::iter::repeat_n(LabelSource::ConsultantNegative, n_cneg))
        .chain(std::iter::repeat_n(LabelSource::RandomNegative, n_rand))
        .collect();
    sources.shuffle(&mut rng);

    let slot_vacancy: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(j, &c)| std::iter::repeat_n(j, c))
        .collect();
    let mut order: Vec<usize> = (0..n_pairs).collect();
    order.shuffle(&mut rng);

    let mut pool = ResumePool::new(pool_size, k, &mut rng);
    let mut taken: Vec<HashSet<usize>> = vec![HashSet::new(); n_vac];
    let mut slot_resume = vec![usize::MAX; n_pairs];
    for &slot in &order {
        let j = slot_vacancy[slot];
        let t = vacancy_topics[j];
        let constraint = match sources[slot] {
            LabelSource::ConsultantPositive => TopicConstraint::Exactly(t),
            LabelSource::ConsultantNegative => TopicConstraint::Not(t),
            LabelSource::RandomNegative => TopicConstraint::Any,
        };
        let r = pool.pick(&mut rng, constraint, &taken[j]).ok_or_else(|| {
            Error::Spec(format!(
                "resume pool of {pool_size} cannot supply a {:?} pair for vacancy {j}",
                sources[slot]
            ))
        })?;
        taken[j].insert(r);
        slot_resume[slot] = r;
    }
    for r in 0..pool_size {
        if pool.topic[r].is_none() {
            let t = rng.gen_range(0..k);
            pool.assign(r, t);
        }
    }

    let vw = id_width(n_vac);
    let rw = id_width(pool_size);
    let vac_id = |j: usize| format!("vac-{j:0vw$}");
    let res_id = |r: usize| format!("res-{r:0rw$}");

    let mut documents = Vec::with_capacity(n_vac + pool_size);
    let mut topics = HashMap::with_capacity(n_vac + pool_size);
    let n_lang = spec.languages.len();
    let mut push_doc = |rng: &mut ChaCha8Rng, id: String, role: Role, topic: usize, mean: f64| {
        let lang = rng.gen_range(0..n_lang);
        let len = sample_length(rng, mean);
        let latents = lex.sample_tokens(rng, topic, role, len, spec.topic_token_fraction);
        let text = lex.render(rng, &latents, lang);
        topics.insert(id.clone(), topic);
        documents.push(Document::new(id, role, spec.languages[lang].clone(), text));
    };
    for (j, &t) in vacancy_topics.iter().enumerate() {
        push_doc(&mut rng, vac_id(j), Role::Vacancy, t, spec.tokens_per_vacancy_mean);
    }
    for r in 0..pool_size {
        let t = pool.topic[r].expect("all resumes assigned");
        push_doc(&mut rng, res_id(r), Role::Resume, t, spec.tokens_per_resume_mean);
    }

    let pairs = (0..n_pairs)
        .map(|slot| {
            LabeledPair::new(
                res_id(slot_resume[slot]),
                vac_id(slot_vacancy[slot]),
                sources[slot],
            )
        })
        .collect();

    Ok(SyntheticCorpus {
        documents,
        pairs,
        topics,
    })
}
