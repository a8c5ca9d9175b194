use crate::animation::{JAW_OPEN, MOUTH_CLOSE, NUM_CHANNELS};
use crate::numerics::RngState;

/// Articulatory class of a synthetic phoneme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhonemeClass {
    Silence,
    OpenVowel,
    MidVowel,
    CloseVowel,
    Bilabial,
    Labiodental,
    Alveolar,
    Velar,
}

/// One entry of the phoneme inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct Phoneme {
    pub symbol: &'static str,
    pub class: PhonemeClass,
    pub voiced: bool,
}

const INVENTORY: [(&str, PhonemeClass, bool); 29] = [
    ("sil", PhonemeClass::Silence, false),
    ("aa", PhonemeClass::OpenVowel, true),
    ("ae", PhonemeClass::OpenVowel, true),
    ("ah", PhonemeClass::OpenVowel, true),
    ("aw", PhonemeClass::OpenVowel, true),
    ("ay", PhonemeClass::OpenVowel, true),
    ("eh", PhonemeClass::MidVowel, true),
    ("er", PhonemeClass::MidVowel, true),
    ("ey", PhonemeClass::MidVowel, true),
    ("ow", PhonemeClass::MidVowel, true),
    ("oy", PhonemeClass::MidVowel, true),
    ("ih", PhonemeClass::CloseVowel, true),
    ("iy", PhonemeClass::CloseVowel, true),
    ("uh", PhonemeClass::CloseVowel, true),
    ("uw", PhonemeClass::CloseVowel, true),
    ("p", PhonemeClass::Bilabial, false),
    ("b", PhonemeClass::Bilabial, true),
    ("m", PhonemeClass::Bilabial, true),
    ("f", PhonemeClass::Labiodental, false),
    ("v", PhonemeClass::Labiodental, true),
    ("t", PhonemeClass::Alveolar, false),
    ("d", PhonemeClass::Alveolar, true),
    ("n", PhonemeClass::Alveolar, true),
    ("s", PhonemeClass::Alveolar, false),
    ("z", PhonemeClass::Alveolar, true),
    ("l", PhonemeClass::Alveolar, true),
    ("k", PhonemeClass::Velar, false),
    ("g", PhonemeClass::Velar, true),
    ("ng", PhonemeClass::Velar, true),
];

/// Seed of the fixed table of secondary-channel targets.
const TABLE_SEED: u64 = 0x5151_7a7a;

impl PhonemeClass {
    /// Jaw opening range `(lo, hi)` for the class.
    fn jaw_range(self) -> (f64, f64) {
        match self {
            PhonemeClass::Silence => (0.02, 0.02),
            PhonemeClass::OpenVowel => (0.5, 0.7),
            PhonemeClass::MidVowel => (0.3, 0.45),
            PhonemeClass::CloseVowel => (0.12, 0.22),
            PhonemeClass::Bilabial => (0.03, 0.06),
            PhonemeClass::Labiodental => (0.08, 0.12),
            PhonemeClass::Alveolar => (0.12, 0.2),
            PhonemeClass::Velar => (0.18, 0.26),
        }
    }

    /// Mean log frame power of the class before any loudness gain.
    pub fn base_energy(self, voiced: bool) -> f64 {
        match self {
            PhonemeClass::Silence => -9.0,
            PhonemeClass::OpenVowel => -1.0,
            PhonemeClass::MidVowel => -1.4,
            PhonemeClass::CloseVowel => -1.8,
            _ if voiced => -3.0,
            _ => -4.0,
        }
    }
}

/// Phoneme inventory with one 32-channel blendshape target per phoneme.
#[derive(Debug, Clone, PartialEq)]
pub struct VisemeTable {
    pub phonemes: Vec<Phoneme>,
    /// `targets[p][c]` in [0, 1].
    pub targets: Vec<[f32; NUM_CHANNELS]>,
}

impl Default for VisemeTable {
    fn default() -> Self {
        Self::standard()
    }
}

impl VisemeTable {
    /// The built-in inventory. jawOpen and mouthClose follow the articulatory
    /// class; the remaining channels are fixed pseudo-random values.
    pub fn standard() -> Self {
        let mut rng = RngState::new(TABLE_SEED);
        let mut phonemes = Vec::with_capacity(INVENTORY.len());
        let mut targets = Vec::with_capacity(INVENTORY.len());
        for (symbol, class, voiced) in INVENTORY {
            let mut t = [0.0f32; NUM_CHANNELS];
            let secondary = if class == PhonemeClass::Silence { 0.05 } else { 0.45 };
            for (c, v) in t.iter_mut().enumerate() {
                let r = rng.uniform();
                if c != JAW_OPEN && c != MOUTH_CLOSE {
                    *v = (r * secondary) as f32;
                }
            }
            let (lo, hi) = class.jaw_range();
            t[JAW_OPEN] = rng.range(lo, hi.max(lo + 1e-9)) as f32;
            t[MOUTH_CLOSE] = match class {
                PhonemeClass::Bilabial => rng.range(0.85, 0.95),
                PhonemeClass::Silence => 0.4,
                PhonemeClass::Labiodental => rng.range(0.3, 0.4),
                _ => rng.range(0.0, 0.08),
            } as f32;
            phonemes.push(Phoneme { symbol, class, voiced });
            targets.push(t);
        }
        VisemeTable { phonemes, targets }
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }
}
