//! Privacy receipts: the `(epsilon, delta)` guarantee attached to every
//! mechanism output, with the parameters that produced it.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Central,
    P2p,
    LapMembership,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReceipt {
    pub mechanism: MechanismKind,
    /// May be infinite; serialized as the string `"inf"` in that case.
    #[serde(with = "real")]
    pub epsilon: f64,
    pub delta: f64,
    /// The parameter set that produced this guarantee.
    pub params: serde_json::Value,
    /// The epsilon a preset was asked for, when it differs from what the
    /// accountant reports.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "real::option")]
    pub target_epsilon: Option<f64>,
    /// Guarantee towards the single peer that receives a user's flipped label.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "real::option")]
    pub peer_view_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl PrivacyReceipt {
    pub fn new(mechanism: MechanismKind, epsilon: f64, delta: f64, params: serde_json::Value) -> Self {
        Self {
            mechanism,
            epsilon,
            delta,
            params,
            target_epsilon: None,
            peer_view_epsilon: None,
            notes: Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.epsilon.is_finite()
    }
}

impl std::fmt::Display for PrivacyReceipt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})-label DP [{:?}]", self.epsilon, self.delta, self.mechanism)
    }
}

/// Serde helpers for reals that may be infinite. JSON has no infinity, so
/// non-finite values travel as the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod real {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct RealVisitor;

    impl Visitor<'_> for RealVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" | "infinity" | "Infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" | "-Infinity" => Ok(f64::NEG_INFINITY),
                "nan" | "NaN" => Ok(f64::NAN),
                other => other.parse().map_err(|_| E::invalid_value(de::Unexpected::Str(other), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(RealVisitor)
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match x {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            #[derive(Deserialize)]
            struct Wrap(#[serde(with = "super")] f64);
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
            #[derive(serde::Serialize)]
            struct Wrap<'a>(#[serde(with = "super")] &'a f64);
            let mut seq = s.serialize_seq(Some(xs.len()))?;
            for x in xs {
                seq.serialize_element(&Wrap(x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            #[derive(Deserialize)]
            struct Wrap(#[serde(with = "super")] f64);
            Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
        }
    }
}
