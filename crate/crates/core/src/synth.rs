//! Synthetic Spanish prose and verse for desk-scale experiments.
//!
//! All text is lower case.
//!
//! Prose documents are built from a small phrase grammar over a fixed
//! lexicon: noun phrases with gender agreement, present and past verbs,
//! infinitives, adverbs and prepositional phrases. Sentences hold one to
//! three phrases joined by commas or semicolons and end in `.`, `!`, `?` or
//! `:`; paragraphs are separated by line breaks.
//!
//! The lexicon is metrically regular: function words have one syllable,
//! adjectives three and every other word two (see [`WORD_CLASSES`]). Phrase
//! length is therefore a property of the phrase template, and rhyme classes
//! follow from the word closing the template.
//!
//! Verse is produced by rejection sampling grammar phrases until each line
//! has the requested syllable count and rhyme class.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::descriptor::RhymeScheme;
use crate::evalkit::{Poem, Prompt};
use crate::phonology::{count_line_syllables, final_word, rhyme_class, Language};
use crate::segmentation::Document;

const DET_M: &[&str] = &["el", "un", "mi", "tu", "su"];
const DET_F: &[&str] = &["la", "mi", "tu", "su"];
const PREPS: &[&str] = &["por", "con", "sin", "en", "tras"];
const CONJ: &[&str] = &["y", "que", "si", "pues", "mas"];

const NOUNS_M: &[&str] = &[
    "cielo", "viento", "fuego", "tiempo", "sueño", "puerto", "bosque", "pueblo", "valle", "monte", "barco", "libro",
    "campo", "trigo", "pino", "faro", "toro", "lobo", "cuervo", "ciervo", "suelo", "vuelo", "nido", "humo", "rumbo",
    "mundo", "fondo", "viaje", "llanto", "canto", "manto", "río", "oro", "polvo", "muro", "hombre", "padre", "nombre",
    "puente", "trueno", "beso", "verso", "tronco", "charco", "jardín", "balcón", "rincón", "salón", "tambor", "color",
    "dolor", "amor", "calor", "sabor", "rumor", "pastor", "metal", "cristal", "papel", "reloj", "país", "lago",
];

const NOUNS_F: &[&str] = &[
    "casa", "luna", "noche", "sombra", "lluvia", "nube", "tierra", "guerra", "sierra", "puerta", "huerta", "playa",
    "pena", "rosa", "fuente", "frente", "gente", "mente", "calle", "torre", "cumbre", "lumbre", "vida", "plaza",
    "carta", "fiesta", "llama", "rama", "fama", "calma", "alma", "palma", "pluma", "bruma", "piedra", "selva",
    "hierba", "flecha", "barca", "taza", "ola", "tarde", "canción", "razón", "pasión", "nación", "verdad", "ciudad",
    "raíz", "nariz", "mujer", "madre", "senda",
];

const ADJ_PAIRS: &[(&str, &str)] = &[
    ("oscuro", "oscura"), ("dorado", "dorada"), ("callado", "callada"), ("cansado", "cansada"), ("perdido", "perdida"),
    ("dormido", "dormida"), ("tranquilo", "tranquila"), ("sereno", "serena"), ("lejano", "lejana"), ("cercano", "cercana"),
    ("pequeño", "pequeña"), ("hermoso", "hermosa"), ("eterno", "eterna"), ("profundo", "profunda"), ("herido", "herida"),
    ("desnudo", "desnuda"), ("amargo", "amarga"), ("sombrío", "sombría"), ("sagrado", "sagrada"), ("maduro", "madura"),
    ("seguro", "segura"), ("dichoso", "dichosa"), ("extraño", "extraña"), ("mojado", "mojada"), ("quebrado", "quebrada"),
    ("antiguo", "antigua"), ("salvaje", "salvaje"), ("humilde", "humilde"), ("valiente", "valiente"),
    ("ardiente", "ardiente"), ("brillante", "brillante"), ("distante", "distante"), ("sencillo", "sencilla"),
    ("cálido", "cálida"), ("pálido", "pálida"), ("desierto", "desierta"), ("abierto", "abierta"),
    ("despierto", "despierta"), ("sediento", "sedienta"), ("violento", "violenta"),
];

const VERBS: &[&str] = &[
    "canta", "llora", "sueña", "busca", "mira", "guarda", "lleva", "abre", "cierra", "cruza", "sube", "baja", "vuelve",
    "nace", "muere", "crece", "brilla", "tiembla", "calla", "habla", "piensa", "siente", "duerme", "llama", "pasa",
    "queda", "vive", "toca", "corre", "vuela", "arde", "cantó", "lloró", "soñó", "miró", "llegó", "partió", "volvió",
    "nació", "dejó", "pensó", "buscó", "guardó", "cruzó", "subió", "bajó", "murió", "ardió", "tembló", "calló", "habló",
];

const TRANSITIVE: &[&str] = &[
    "busca", "mira", "guarda", "lleva", "abre", "cierra", "cruza", "toca", "llama", "pinta", "besa", "buscó", "miró",
    "guardó", "cruzó", "dejó", "abrió", "cerró", "tocó", "llamó", "pintó", "besó",
];

const MODALS: &[&str] = &["quiere", "puede", "sabe", "debe", "suele", "quiso", "pudo", "supo"];

const INFINITIVES: &[&str] = &[
    "cantar", "luchar", "soñar", "volar", "mirar", "llorar", "bailar", "amar", "callar", "hablar", "pasar", "llegar",
    "jugar", "nadar", "volver", "correr", "perder", "beber", "comer", "llover", "nacer", "crecer", "caer", "leer",
    "vivir", "partir", "sentir", "morir", "dormir", "decir", "subir", "abrir", "salir", "seguir", "pedir", "reír",
];

const ADVERBS: &[&str] = &[
    "siempre", "nunca", "lejos", "cerca", "tarde", "pronto", "juntos", "solos", "luego", "ayer", "jamás", "quizás",
    "después", "también",
];

const SUBJECTS: &[&str] = &[
    "ella", "nadie", "alguien", "pedro", "carmen", "inés", "tomás", "andrés", "marta", "pablo", "lola", "diego",
];

/// Word classes with their syllable counts. Every word of a class has the
/// same count, so a phrase template fixes the phrase length up to the
/// optional adjectives.
pub const WORD_CLASSES: &[(&str, &[&str], usize)] = &[
    ("determiner", DET_M, 1),
    ("determiner", DET_F, 1),
    ("preposition", PREPS, 1),
    ("conjunction", CONJ, 1),
    ("noun", NOUNS_M, 2),
    ("noun", NOUNS_F, 2),
    ("verb", VERBS, 2),
    ("verb", TRANSITIVE, 2),
    ("modal", MODALS, 2),
    ("infinitive", INFINITIVES, 2),
    ("adverb", ADVERBS, 2),
    ("subject", SUBJECTS, 2),
];

/// Adjectives have three syllables.
pub const ADJECTIVE_SYLLABLES: usize = 3;

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty word list")
}

fn noun_phrase<R: Rng + ?Sized>(rng: &mut R, adjective: f64) -> String {
    let fem = rng.gen_bool(0.5);
    let (det, noun) = if fem {
        (pick(rng, DET_F), pick(rng, NOUNS_F))
    } else {
        (pick(rng, DET_M), pick(rng, NOUNS_M))
    };
    if rng.gen_bool(adjective) {
        let (m, f) = *ADJ_PAIRS.choose(rng).expect("adjectives");
        format!("{det} {noun} {}", if fem { f } else { m })
    } else {
        format!("{det} {noun}")
    }
}

fn prep_phrase<R: Rng + ?Sized>(rng: &mut R, adjective: f64) -> String {
    format!("{} {}", pick(rng, PREPS), noun_phrase(rng, adjective))
}

/// One phrase of the grammar (no punctuation).
pub fn phrase<R: Rng + ?Sized>(rng: &mut R) -> String {
    let w = |rng: &mut R, xs: &[&'static str]| pick(rng, xs);
    match rng.gen_range(0..18) {
        0 => format!("{} {}", noun_phrase(rng, 0.5), w(rng, VERBS)),
        1 => format!("{} {} {}", noun_phrase(rng, 0.3), w(rng, VERBS), w(rng, ADVERBS)),
        2 => format!("{} {}", w(rng, VERBS), prep_phrase(rng, 0.5)),
        3 => prep_phrase(rng, 0.5),
        4 => format!("{} de {}", prep_phrase(rng, 0.2), noun_phrase(rng, 0.3)),
        5 => format!("{} {} {}", w(rng, SUBJECTS), w(rng, TRANSITIVE), noun_phrase(rng, 0.4)),
        6 => format!("{} {} {}", w(rng, ADVERBS), w(rng, TRANSITIVE), noun_phrase(rng, 0.4)),
        7 => format!("{} {} {}", w(rng, CONJ), w(rng, MODALS), w(rng, INFINITIVES)),
        8 => format!("{} {} {}", w(rng, SUBJECTS), w(rng, MODALS), w(rng, INFINITIVES)),
        9 => format!("{} {} {}", w(rng, CONJ), w(rng, TRANSITIVE), noun_phrase(rng, 0.5)),
        10 => format!("{} {}", noun_phrase(rng, 0.3), prep_phrase(rng, 0.3)),
        11 => format!("{} {} {}", w(rng, SUBJECTS), w(rng, VERBS), prep_phrase(rng, 0.3)),
        12 => format!("{} {} {}", noun_phrase(rng, 0.3), w(rng, MODALS), w(rng, INFINITIVES)),
        13 => format!("{} {} {} {}", w(rng, CONJ), w(rng, SUBJECTS), w(rng, MODALS), w(rng, INFINITIVES)),
        14 => format!("{} {} {}", prep_phrase(rng, 0.0), w(rng, MODALS), w(rng, INFINITIVES)),
        15 => format!("{} {}", w(rng, TRANSITIVE), noun_phrase(rng, 0.7)),
        16 => format!("{} {}", w(rng, CONJ), noun_phrase(rng, 0.8)),
        _ => format!("{} {} {} {}", w(rng, ADVERBS), w(rng, SUBJECTS), w(rng, MODALS), w(rng, INFINITIVES)),
    }
}

fn sentence<R: Rng + ?Sized>(rng: &mut R) -> String {
    let n = *[1usize, 1, 2, 2, 2, 3].choose(rng).expect("lengths");
    let mut s = phrase(rng);
    for _ in 1..n {
        s.push_str(if rng.gen_bool(0.8) { ", " } else { "; " });
        s.push_str(&phrase(rng));
    }
    s.push(*['.', '.', '.', '.', '!', '?', ':'].choose(rng).expect("marks"));
    s
}

fn document<R: Rng + ?Sized>(rng: &mut R) -> String {
    let paragraphs = rng.gen_range(1..=3);
    (0..paragraphs)
        .map(|_| {
            let sentences = rng.gen_range(3..=10);
            (0..sentences).map(|_| sentence(rng)).collect::<Vec<_>>().join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Generates documents until they hold at least `min_words` whitespace
/// tokens. Document ids count from `first_id`.
pub fn prose_documents(seed: u64, min_words: usize, first_id: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = 0;
    let mut docs = Vec::new();
    while words < min_words {
        let text = document(&mut rng);
        words += text.split_whitespace().count();
        docs.push(Document {
            id: first_id + docs.len() as u64,
            text,
        });
    }
    docs
}

/// Draws grammar phrases until one has `syllables` syllables and, when
/// given, rhyme class `class` with a final word not in `avoid`. Gives up
/// after `tries` draws.
pub fn matching_phrase<R: Rng + ?Sized>(
    rng: &mut R,
    syllables: usize,
    class: Option<&str>,
    avoid: &[String],
    tries: usize,
) -> Option<String> {
    (0..tries).find_map(|_| {
        let p = phrase(rng);
        if count_line_syllables(&p, Language::Spanish) != syllables {
            return None;
        }
        if let Some(c) = class {
            if rhyme_class(&p, Language::Spanish).key() != Some(c) {
                return None;
            }
            let w = final_word(&p)?;
            if avoid.contains(&w) {
                return None;
            }
        }
        Some(p)
    })
}

/// Octosyllabic quatrains.
pub const DEFAULT_SCHEMES: &[&str] = &["8A 8B 8B 8A", "8A 8B 8A 8B", "8A 8A 8B 8B"];

/// Writes `count` poems for `scheme`. Letters are bound to distinct rhyme
/// classes drawn from the grammar's own distribution.
pub fn poems(seed: u64, scheme: &RhymeScheme, count: usize) -> Vec<Poem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    'poem: while out.len() < count {
        let mut classes: HashMap<char, String> = HashMap::new();
        let mut finals: HashMap<char, Vec<String>> = HashMap::new();
        let mut lines = Vec::new();
        for line in &scheme.lines {
            let text = match line.letter {
                None => matching_phrase(&mut rng, line.syllables, None, &[], 20_000),
                Some(letter) => match classes.get(&letter) {
                    Some(c) => matching_phrase(&mut rng, line.syllables, Some(c), &finals[&letter], 200_000),
                    None => (0..200).find_map(|_| {
                        let p = matching_phrase(&mut rng, line.syllables, None, &[], 20_000)?;
                        let key = rhyme_class(&p, Language::Spanish).key()?.to_string();
                        (!classes.values().any(|c| *c == key)).then_some((p, key))
                    })
                    .map(|(p, key)| {
                        classes.insert(letter, key);
                        p
                    }),
                },
            };
            let Some(text) = text else { continue 'poem };
            if let Some(letter) = line.letter {
                finals.entry(letter).or_default().push(final_word(&text).unwrap_or_default());
            }
            lines.push(text);
        }
        out.push(Poem {
            scheme: scheme.clone(),
            lines,
        });
    }
    out
}

/// `count` prompts cycling through `schemes`. Each first line is a fresh
/// grammar phrase with the scheme's first syllable count, ending in one of
/// `classes` (cycled as well).
pub fn prompts<R: Rng + ?Sized>(rng: &mut R, schemes: &[RhymeScheme], classes: &[String], count: usize) -> Vec<Prompt> {
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    while out.len() < count && !schemes.is_empty() && !classes.is_empty() && i < count * 10 {
        let scheme = &schemes[i % schemes.len()];
        let class = &classes[i % classes.len()];
        i += 1;
        let Some(first) = scheme.lines.first() else { continue };
        if let Some(line) = matching_phrase(rng, first.syllables, Some(class), &[], 200_000) {
            out.push(Prompt {
                first_line: line,
                scheme: scheme.to_string(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phonology::{count_word_syllables, rhymes};

    #[test]
    fn prose_is_deterministic_and_sized() {
        let a = prose_documents(3, 2_000, 0);
        let b = prose_documents(3, 2_000, 0);
        assert_eq!(a, b);
        let words: usize = a.iter().map(|d| d.text.split_whitespace().count()).sum();
        assert!(words >= 2_000);
        assert!(a.iter().enumerate().all(|(i, d)| d.id == i as u64));
    }

    #[test]
    fn lexicon_is_metrically_regular() {
        for (name, words, syllables) in WORD_CLASSES {
            for w in *words {
                assert_eq!(count_word_syllables(w, Language::Spanish), *syllables, "{name} {w}");
            }
        }
        for (m, f) in ADJ_PAIRS {
            assert_eq!(count_word_syllables(m, Language::Spanish), ADJECTIVE_SYLLABLES, "{m}");
            assert_eq!(count_word_syllables(f, Language::Spanish), ADJECTIVE_SYLLABLES, "{f}");
        }
    }

    #[test]
    fn poems_follow_their_scheme() {
        let scheme: RhymeScheme = "8A 8B 8B 8A".parse().unwrap();
        for p in poems(1, &scheme, 3) {
            assert_eq!(p.lines.len(), 4);
            for l in &p.lines {
                assert_eq!(count_line_syllables(l, Language::Spanish), 8);
            }
            assert!(rhymes(&p.lines[0], &p.lines[3], Language::Spanish));
            assert!(rhymes(&p.lines[1], &p.lines[2], Language::Spanish));
            assert!(!rhymes(&p.lines[0], &p.lines[1], Language::Spanish));
        }
    }
}
