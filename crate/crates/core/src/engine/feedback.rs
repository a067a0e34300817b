//! Feedback vocabulary: stages, event kinds with their (level, modality)
//! cells, and the character facial-expression table.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerformanceStage {
    Low,
    Medium,
    High,
}

impl PerformanceStage {
    pub const ALL: [PerformanceStage; 3] = [Self::Low, Self::Medium, Self::High];

    pub fn rank(self) -> usize {
        self as usize
    }

    pub fn pace(self) -> Pace {
        match self {
            Self::Low => Pace::Slow,
            Self::Medium => Pace::Normal,
            Self::High => Pace::Fast,
        }
    }

    pub fn tempo(self) -> Tempo {
        match self {
            Self::Low => Tempo::Low,
            Self::Medium => Tempo::Medium,
            Self::High => Tempo::High,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackLevel {
    Immediate,
    Storytelling,
    Progress,
    Reinforcing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Auditory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pace {
    Slow,
    Normal,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tempo {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EggColor {
    Red,
    Orange,
    Yellow,
    Green,
    Blue,
    Purple,
}

impl EggColor {
    pub const PALETTE: [EggColor; 6] = [
        Self::Red,
        Self::Orange,
        Self::Yellow,
        Self::Green,
        Self::Blue,
        Self::Purple,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Character {
    Boy,
    Girl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Animation {
    BoyHeadUp,
    BoyCatching,
    BoyTurningWithEggs,
    BoyHandingOver,
    BoyTurningBack,
    GirlReceiving,
    GirlTurningWithEggs,
    GirlPuttingDown,
    GirlTurningBack,
}

impl Animation {
    pub const ALL: [Animation; 9] = [
        Self::BoyHeadUp,
        Self::BoyCatching,
        Self::BoyTurningWithEggs,
        Self::BoyHandingOver,
        Self::BoyTurningBack,
        Self::GirlReceiving,
        Self::GirlTurningWithEggs,
        Self::GirlPuttingDown,
        Self::GirlTurningBack,
    ];

    pub fn character(self) -> Character {
        match self {
            Self::BoyHeadUp
            | Self::BoyCatching
            | Self::BoyTurningWithEggs
            | Self::BoyHandingOver
            | Self::BoyTurningBack => Character::Boy,
            _ => Character::Girl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Neutral,
    Expecting,
    Smiling,
    Happy,
    ExtremelyHappy,
}

/// Face shown for an animation given the current stage and how long the
/// child has been continuously in High.
pub fn face_for(animation: Animation, stage: PerformanceStage, high_dwell_s: f64) -> Face {
    use Animation::*;
    use PerformanceStage::*;
    match animation {
        BoyHeadUp => Face::Expecting,
        BoyCatching | BoyTurningWithEggs | BoyHandingOver => match stage {
            Low => Face::Neutral,
            Medium | High => Face::Happy,
        },
        BoyTurningBack => Face::Neutral,
        GirlReceiving | GirlTurningWithEggs => match stage {
            Low => Face::Neutral,
            Medium => Face::Smiling,
            High if high_dwell_s > EXTREME_HAPPY_AFTER_S => Face::ExtremelyHappy,
            High => Face::Happy,
        },
        GirlPuttingDown | GirlTurningBack => Face::Neutral,
    }
}

/// Continuous time in High after which the girl becomes extremely happy.
pub const EXTREME_HAPPY_AFTER_S: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    BirdHeight,
    MovementSpeed,
    LayRate,
    FacialExpression,
    HeartBubbles,
    MusicTempo,
    EggStored,
    RowHalo,
    TrayStars,
    StarsAwarded,
    Woohoo,
    Ohyea,
    Victory,
    ColoredEgg,
    GoldenEgg,
    Bubbles,
    Emoji,
    BubbleSound,
    CoinSound,
}

impl FeedbackKind {
    pub const ALL: [FeedbackKind; 19] = [
        Self::BirdHeight,
        Self::MovementSpeed,
        Self::LayRate,
        Self::FacialExpression,
        Self::HeartBubbles,
        Self::MusicTempo,
        Self::EggStored,
        Self::RowHalo,
        Self::TrayStars,
        Self::StarsAwarded,
        Self::Woohoo,
        Self::Ohyea,
        Self::Victory,
        Self::ColoredEgg,
        Self::GoldenEgg,
        Self::Bubbles,
        Self::Emoji,
        Self::BubbleSound,
        Self::CoinSound,
    ];

    /// The feedback-framework cell this kind belongs to.
    pub fn cell(self) -> (FeedbackLevel, Modality) {
        use FeedbackKind::*;
        use FeedbackLevel::*;
        use Modality::*;
        match self {
            BirdHeight => (Immediate, Visual),
            MovementSpeed | LayRate | FacialExpression | HeartBubbles => (Storytelling, Visual),
            MusicTempo => (Storytelling, Auditory),
            EggStored | RowHalo | TrayStars | StarsAwarded => (Progress, Visual),
            Woohoo | Ohyea | Victory => (Progress, Auditory),
            ColoredEgg | GoldenEgg | Bubbles | Emoji => (Reinforcing, Visual),
            BubbleSound | CoinSound => (Reinforcing, Auditory),
        }
    }

    pub fn as_str(self) -> &'static str {
        use FeedbackKind::*;
        match self {
            BirdHeight => "bird_height",
            MovementSpeed => "movement_speed",
            LayRate => "lay_rate",
            FacialExpression => "facial_expression",
            HeartBubbles => "heart_bubbles",
            MusicTempo => "music_tempo",
            EggStored => "egg_stored",
            RowHalo => "row_halo",
            TrayStars => "tray_stars",
            StarsAwarded => "stars_awarded",
            Woohoo => "woohoo",
            Ohyea => "ohyea",
            Victory => "victory",
            ColoredEgg => "colored_egg",
            GoldenEgg => "golden_egg",
            Bubbles => "bubbles",
            Emoji => "emoji",
            BubbleSound => "bubble_sound",
            CoinSound => "coin_sound",
        }
    }
}

/// Kind-specific content of a feedback event. Serialized adjacently as
/// `{"kind": ..., "payload": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    content = "payload",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum Effect {
    BirdHeight {
        height: f64,
    },
    MovementSpeed {
        speed: Pace,
        from: Option<PerformanceStage>,
        to: PerformanceStage,
    },
    LayRate {
        interval_s: f64,
        from: Option<PerformanceStage>,
        to: PerformanceStage,
    },
    FacialExpression {
        character: Character,
        animation: Animation,
        face: Face,
    },
    HeartBubbles {},
    MusicTempo {
        tempo: Tempo,
        from: Option<PerformanceStage>,
        to: PerformanceStage,
    },
    EggStored {
        eggs_stored: u32,
        carts_filled: u32,
    },
    RowHalo {
        row: u32,
    },
    TrayStars {
        tray: u32,
    },
    StarsAwarded {
        stars: u8,
        score: u8,
    },
    Woohoo {
        row: u32,
    },
    Ohyea {
        tray: u32,
    },
    Victory {},
    ColoredEgg {
        egg: u32,
        color: EggColor,
    },
    GoldenEgg {
        egg: u32,
    },
    Bubbles {
        egg: u32,
    },
    Emoji {
        egg: u32,
    },
    BubbleSound {
        egg: u32,
    },
    CoinSound {
        egg: u32,
    },
}

impl Effect {
    pub fn kind(&self) -> FeedbackKind {
        use FeedbackKind as K;
        match self {
            Effect::BirdHeight { .. } => K::BirdHeight,
            Effect::MovementSpeed { .. } => K::MovementSpeed,
            Effect::LayRate { .. } => K::LayRate,
            Effect::FacialExpression { .. } => K::FacialExpression,
            Effect::HeartBubbles {} => K::HeartBubbles,
            Effect::MusicTempo { .. } => K::MusicTempo,
            Effect::EggStored { .. } => K::EggStored,
            Effect::RowHalo { .. } => K::RowHalo,
            Effect::TrayStars { .. } => K::TrayStars,
            Effect::StarsAwarded { .. } => K::StarsAwarded,
            Effect::Woohoo { .. } => K::Woohoo,
            Effect::Ohyea { .. } => K::Ohyea,
            Effect::Victory {} => K::Victory,
            Effect::ColoredEgg { .. } => K::ColoredEgg,
            Effect::GoldenEgg { .. } => K::GoldenEgg,
            Effect::Bubbles { .. } => K::Bubbles,
            Effect::Emoji { .. } => K::Emoji,
            Effect::BubbleSound { .. } => K::BubbleSound,
            Effect::CoinSound { .. } => K::CoinSound,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Effect::BirdHeight { height } => height.is_finite(),
            Effect::LayRate { interval_s, .. } => interval_s.is_finite(),
            _ => true,
        }
    }
}

/// A timestamped feedback action. Level and modality always agree with
/// the effect's kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackEvent {
    pub t: f64,
    pub effect: Effect,
}

impl FeedbackEvent {
    pub fn new(t: f64, effect: Effect) -> Self {
        Self { t, effect }
    }

    pub fn kind(&self) -> FeedbackKind {
        self.effect.kind()
    }

    pub fn level(&self) -> FeedbackLevel {
        self.kind().cell().0
    }

    pub fn modality(&self) -> Modality {
        self.kind().cell().1
    }

    /// Events that count as a reward for the simulated child.
    pub fn is_reward(&self) -> bool {
        matches!(self.level(), FeedbackLevel::Progress | FeedbackLevel::Reinforcing)
            || self.kind() == FeedbackKind::HeartBubbles
    }

    /// Stage change carried by storytelling events, if any.
    pub fn stage_change(&self) -> Option<(Option<PerformanceStage>, PerformanceStage)> {
        match self.effect {
            Effect::MovementSpeed { from, to, .. } => Some((from, to)),
            _ => None,
        }
    }
}
