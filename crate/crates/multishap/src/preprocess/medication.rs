use crate::error::{Error, Result};

/// The fixed registry of medication groups; the encoder emits one binary
/// flag per group in this order.
pub const MEDICATION_GROUPS: [&str; 17] = [
    "Propofol",
    "Cefazolin",
    "Noradrenaline",
    "Phenylephrine",
    "Ephedrine",
    "Atropine",
    "Midazolam",
    "Ketamine",
    "Sufentanil",
    "Remifentanil",
    "Rocuronium",
    "Ondansetron",
    "Dexamethasone",
    "Heparin",
    "TranexamicAcid",
    "Insulin",
    "Magnesium",
];

pub const N_MEDICATION_GROUPS: usize = 17;

pub type MedicationVector = [u8; N_MEDICATION_GROUPS];

/// Binary indicator per group. A patient without a medication record gets the
/// all-zero vector.
pub fn encode_medication(administered: Option<&[String]>) -> Result<MedicationVector> {
    let mut out = [0u8; N_MEDICATION_GROUPS];
    let Some(groups) = administered else {
        return Ok(out);
    };
    for g in groups {
        let idx = MEDICATION_GROUPS
            .iter()
            .position(|&name| name == g)
            .ok_or_else(|| Error::UnknownMedicationGroup(g.clone()))?;
        out[idx] = 1;
    }
    Ok(out)
}
