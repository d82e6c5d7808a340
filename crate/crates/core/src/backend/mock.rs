use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{BackendError, BackendIdentity, TextBackend};
use crate::corpus::TaskLabel;
use crate::infer::SamplingParams;
use crate::prompt::task_of_prompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockMode {
    /// Emits `per_call` vignettes in the `<<ITEM>>` block grammar for the
    /// task tagged in the prompt.
    Vignettes { per_call: usize },
    /// Answers the prompt: a choice line for MCQ prompts, otherwise a short
    /// task-appropriate reply.
    Answers,
}

/// Deterministic stand-in for a live model: the output is a pure function of
/// `(prompt, sampling.seed)`.
#[derive(Debug, Clone)]
pub struct MockBackend {
    model: String,
    mode: MockMode,
}

impl MockBackend {
    pub fn vignettes(model: impl Into<String>, per_call: usize) -> Self {
        Self {
            model: model.into(),
            mode: MockMode::Vignettes {
                per_call: per_call.max(1),
            },
        }
    }

    pub fn answers(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            mode: MockMode::Answers,
        }
    }

    fn rng(prompt: &str, seed: Option<u64>) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(prompt.as_bytes());
        h.update(seed.unwrap_or(0).to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

impl TextBackend for MockBackend {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            name: "mock".into(),
            model: self.model.clone(),
        }
    }

    fn generate(&self, prompt: &str, sampling: &SamplingParams) -> Result<String, BackendError> {
        let mut rng = Self::rng(prompt, sampling.seed);
        let task = task_of_prompt(prompt).unwrap_or(TaskLabel::Diagnosis);
        Ok(match self.mode {
            MockMode::Vignettes { per_call } => {
                let mut out = String::new();
                for _ in 0..per_call {
                    let (q, a) = vignette(&mut rng, task);
                    out.push_str(&format!("<<ITEM>>\nQ: {q}\nA: {a}\n<<END>>\n"));
                }
                out
            }
            MockMode::Answers => match mcq_letters(prompt) {
                Some(letters) => format!("Answer: {}", letters.choose(&mut rng).expect("non-empty")),
                None => answer(&mut rng, task),
            },
        })
    }
}

fn mcq_letters(prompt: &str) -> Option<Vec<char>> {
    let letters: Vec<char> = prompt
        .lines()
        .filter_map(|l| {
            let mut c = l.chars();
            match (c.next(), c.next(), c.next()) {
                (Some(x @ 'A'..='F'), Some('.'), Some(' ')) => Some(x),
                _ => None,
            }
        })
        .collect();
    (letters.len() >= 2).then_some(letters)
}

const PEOPLE: &[&str] = &[
    "student",
    "teacher",
    "nurse",
    "software developer",
    "construction worker",
    "new mother",
    "retired engineer",
    "college athlete",
    "bank clerk",
    "chef",
    "guitarist",
    "delivery driver",
];

const SITES: &[&str] = &[
    "palms",
    "soles of my feet",
    "underarms",
    "face and scalp",
    "groin",
    "back",
    "palms and soles",
    "forehead",
];

const ONSETS: &[&str] = &[
    "since puberty",
    "for the past two years",
    "since starting a new antidepressant",
    "since menopause began",
    "for about six months",
    "since early childhood",
    "after a bout of flu last winter",
];

const PATTERNS: &[&str] = &[
    "even in cool air-conditioned rooms",
    "during the day but never while asleep",
    "at night, soaking the sheets",
    "on both sides equally",
    "mostly on the left side",
    "several times every week",
    "whenever I am in meetings",
];

const IMPACTS: &[&str] = &[
    "drips onto my paperwork",
    "ruins my shirts",
    "makes gripping tools difficult",
    "smudges ink on exam papers",
    "makes shaking hands awkward",
    "leaves marks on my phone screen",
];

const DIAG_ASKS: &[&str] = &[
    "Is this a medical condition, and what could be causing it?",
    "Do I have hyperhidrosis or is this normal?",
    "What tests would help diagnose the cause?",
    "Could this be a sign of an underlying thyroid problem?",
    "Is this primary or secondary sweating?",
];

const TREAT_ASKS: &[&str] = &[
    "Which treatment options should I try first?",
    "Would antiperspirants, iontophoresis or botox help?",
    "What medication could help me manage this?",
    "Is surgery a reasonable treatment option for me?",
    "How should I use a prescription antiperspirant?",
];

const COUNSEL_ASKS: &[&str] = &[
    "I feel embarrassed and anxious around people. How can I cope?",
    "It makes me avoid dating and social events. What can I do about the anxiety?",
    "I am ashamed to shake hands at work. How do I deal with the stress?",
    "I feel hopeless and self conscious. Is there a way to build confidence?",
];

const SECOND_LINE: &[&str] = &[
    "tap-water iontophoresis three times a week",
    "botulinum toxin injections repeated every few months",
    "an oral anticholinergic such as glycopyrrolate at a low dose",
    "microwave thermolysis of the sweat glands",
];

const COPING: &[&str] = &[
    "Keeping a spare shirt and absorbent pads at hand often lowers anticipatory worry.",
    "Brief paced breathing before meetings can interrupt the stress-sweat cycle.",
    "Talking with a counselor about cognitive strategies helps many people cope.",
    "Peer support groups show that you are far from alone with this.",
];

fn vignette(rng: &mut ChaCha8Rng, task: TaskLabel) -> (String, String) {
    let age = rng.random_range(14..=72);
    let person = PEOPLE.choose(rng).expect("pool");
    let site = SITES.choose(rng).expect("pool");
    let onset = ONSETS.choose(rng).expect("pool");
    let pattern = PATTERNS.choose(rng).expect("pool");
    let impact = IMPACTS.choose(rng).expect("pool");
    let opening = match rng.random_range(0..3) {
        0 => format!("I am a {age}-year-old {person} and my {site} sweat heavily {pattern}, {onset}."),
        1 => format!("{onset_cap}, my {site} have been dripping {pattern}; I work as a {person} and I am {age}.", onset_cap = capitalize(onset)),
        _ => format!("As a {person} aged {age}, I notice sweat pouring from my {site} {pattern} {onset}."),
    };
    let query = match task {
        TaskLabel::Diagnosis => format!("{opening} It {impact}. {}", DIAG_ASKS.choose(rng).expect("pool")),
        TaskLabel::Treatment => format!("{opening} It {impact}. {}", TREAT_ASKS.choose(rng).expect("pool")),
        TaskLabel::Counseling => format!("{opening} It {impact}. {}", COUNSEL_ASKS.choose(rng).expect("pool")),
    };
    let secondary = onset.contains("antidepressant")
        || onset.contains("menopause")
        || onset.contains("flu")
        || pattern.contains("night")
        || pattern.contains("left side");
    let answer = match task {
        TaskLabel::Diagnosis if secondary => format!(
            "Sweating that appeared {onset} and occurs {pattern} points toward secondary hyperhidrosis, \
             so the diagnosis should look for an underlying cause such as medication, hormones or infection. \
             Blood tests including thyroid function and a medication review are sensible first steps."
        ),
        TaskLabel::Diagnosis => format!(
            "Focal sweating of the {site} that began {onset} and occurs {pattern} fits primary focal hyperhidrosis. \
             The diagnosis is clinical; a starch iodine test can map the affected area, and a visit to a \
             dermatologist confirms it is not a sign of another condition."
        ),
        TaskLabel::Treatment => format!(
            "Start with a clinical-strength aluminium chloride antiperspirant applied to the {site} at night. \
             If it has not helped after {weeks} weeks, consider {second} with a dermatologist, \
             keeping surgery as a last option.",
            weeks = rng.random_range(2..=8),
            second = SECOND_LINE.choose(rng).expect("pool"),
        ),
        TaskLabel::Counseling => format!(
            "It is understandable to feel anxious when your {site} sweat {pattern}; many people share this \
             and it is not your fault. {} If the anxiety keeps you from social life, a therapist can help you cope.",
            COPING.choose(rng).expect("pool"),
        ),
    };
    (query, answer)
}

fn answer(rng: &mut ChaCha8Rng, task: TaskLabel) -> String {
    let text = match task {
        TaskLabel::Diagnosis => [
            "Your description is consistent with primary focal hyperhidrosis; a dermatologist can confirm the diagnosis and rule out secondary causes.",
            "Sweating at night or on one side suggests a secondary cause, so ask your doctor about blood tests and a medication review.",
            "Excessive sweating that started in adolescence and affects both palms is usually primary hyperhidrosis, a recognised medical condition.",
        ]
        .choose(rng),
        TaskLabel::Treatment => [
            "Begin with an aluminium chloride antiperspirant at night; if that fails, iontophoresis or botulinum toxin injections are next options.",
            "Topical antiperspirants come first, then iontophoresis for hands and feet, and oral glycopyrrolate if several areas are affected.",
            "Botox injections give months of relief for underarm sweating; surgery is reserved for severe cases that do not respond.",
        ]
        .choose(rng),
        TaskLabel::Counseling => [
            "Feeling embarrassed is a very common response and you are not alone; small preparation habits and talking to a counselor can ease the anxiety.",
            "It makes sense that this affects your confidence. Cognitive strategies and peer support groups help many people cope with social worry.",
            "Your feelings are valid. Planning for situations you find stressful and practising slow breathing can reduce the sweat-anxiety loop.",
        ]
        .choose(rng),
    };
    text.expect("pool").to_string()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
