//! Small synthetic intent corpora for desk-scale experiments and tests.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::text::LabeledUtterance;

const CITIES: &[&str] = &[
    "boston", "seattle", "denver", "dallas", "atlanta", "chicago", "miami", "phoenix",
];
const DAYS: &[&str] = &["monday", "tuesday", "friday", "sunday", "tomorrow", "today"];
const GENRES: &[&str] = &["jazz", "rock", "folk", "blues", "pop", "soul"];
const ARTISTS: &[&str] = &["adele", "prince", "bowie", "madonna", "queen"];

struct Intent {
    label: &'static str,
    templates: &'static [&'static str],
}

const INTENTS: &[Intent] = &[
    Intent {
        label: "FlightSearch",
        templates: &[
            "show me flights from {city} to {city}",
            "list flights from {city} to {city} on {day}",
            "which flights go to {city}",
            "find a flight to {city} {day}",
        ],
    },
    Intent {
        label: "BookTicket",
        templates: &[
            "book a ticket to {city}",
            "buy me a ticket to {city} for {day}",
            "reserve a seat to {city}",
            "i want to book a trip to {city} on {day}",
        ],
    },
    Intent {
        label: "GetWeather",
        templates: &[
            "what is the weather in {city}",
            "will it rain in {city} {day}",
            "how cold is it in {city} on {day}",
            "weather forecast for {city}",
        ],
    },
    Intent {
        label: "PlayMusic",
        templates: &[
            "play some {genre} music",
            "play {genre} by {artist}",
            "put on a song by {artist}",
            "i want to hear {artist}",
        ],
    },
];

fn fill(template: &str, rng: &mut ChaCha8Rng) -> String {
    template
        .split_whitespace()
        .map(|w| {
            let pool = match w {
                "{city}" => CITIES,
                "{day}" => DAYS,
                "{genre}" => GENRES,
                "{artist}" => ARTISTS,
                _ => return w.to_string(),
            };
            pool.choose(rng).expect("non-empty pool").to_string()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `per_intent` utterances for each of the first `intents` (at most 4)
/// intents, interleaved by intent. Deterministic for a given seed.
pub fn intent_corpus(per_intent: usize, intents: usize, seed: u64) -> Vec<LabeledUtterance> {
    let intents = &INTENTS[..intents.clamp(1, INTENTS.len())];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_intent * intents.len());
    for _ in 0..per_intent {
        for intent in intents {
            let template = intent.templates.choose(&mut rng).expect("templates");
            let text = fill(template, &mut rng);
            out.push(LabeledUtterance::from_text(intent.label, &text).expect("valid template"));
        }
    }
    out
}

/// Eight fixed utterances over two intents.
pub fn tiny_corpus() -> Vec<LabeledUtterance> {
    [
        ("FlightSearch", "show me flights from boston to seattle"),
        ("FlightSearch", "list flights to denver on monday"),
        ("FlightSearch", "which flights go to dallas"),
        ("FlightSearch", "find a flight to miami tomorrow"),
        ("BookTicket", "buy me a ticket to seattle"),
        ("BookTicket", "book a ticket to boston for friday"),
        ("BookTicket", "reserve a seat to chicago"),
        ("BookTicket", "i want to book a trip to atlanta"),
    ]
    .iter()
    .map(|(l, t)| LabeledUtterance::from_text(*l, t).expect("valid fixture"))
    .collect()
}
