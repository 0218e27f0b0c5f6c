//! Seeded synthetic profiles for demos, benches and tests.
//!
//! Men and women are drawn from the same field distributions, so any
//! difference an audit finds comes from the backend, not the corpus.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Gender, Profile};

const MALE_NAMES: &[&str] = &[
    "James", "Lucas", "Daniel", "Thomas", "Pieter", "Marco", "David", "Samuel", "Omar", "Jonas", "Luca", "Adam",
];
const FEMALE_NAMES: &[&str] = &[
    "Emma", "Sophie", "Maria", "Laura", "Anna", "Julia", "Sara", "Nora", "Leila", "Eva", "Lisa", "Hannah",
];
const SURNAMES: &[&str] = &[
    "Jansen", "Peeters", "Smith", "Rossi", "Dubois", "Novak", "Garcia", "Murphy", "Keller", "Silva", "Haddad",
    "Berg",
];
const COUNTRIES: &[&str] = &["Belgium", "Netherlands", "France", "Germany", "United Kingdom", "Ireland"];
const OTHER_JOBS: &[(&str, &str)] = &[
    ("Accountant", "Financial Services"),
    ("Software Engineer", "Information Technology"),
    ("Nurse", "Hospital & Health Care"),
    ("Sales Manager", "Retail"),
    ("Mechanic", "Automotive"),
    ("Data Analyst", "Information Technology"),
];
const TEACHING_SKILLS: &[&str] = &[
    "Lesson Planning", "Classroom Management", "Curriculum Development", "Public Speaking", "Tutoring",
    "Microsoft Office", "Research",
];
const OTHER_SKILLS: &[&str] = &[
    "Microsoft Excel", "Customer Service", "Project Management", "Data Analysis", "Sales", "Python",
    "Negotiation", "Research",
];
const DEGREES: &[&str] = &[
    "Bachelor of Education", "Master of Science", "Bachelor of Arts", "Teaching Certificate",
    "Bachelor of Business Administration", "Master of Arts",
];
const CERTS: &[&str] = &["First Aid", "TEFL", "PMP", "Google Analytics", "CPR"];
const INTERESTS: &[&str] = &["Reading", "Travel", "Music", "Sports", "Volunteering", "Photography"];

fn pick_some<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], lo: usize, hi: usize) -> Vec<String> {
    let n = rng.random_range(lo..=hi).min(pool.len());
    pool.choose_multiple(rng, n).map(|s| s.to_string()).collect()
}

/// `per_gender` profiles of each gender, a share `in_role_fraction` of which
/// hold `role` as their current job. Ids are `syn-<index>`.
pub fn synthetic_profiles(per_gender: usize, in_role_fraction: f64, role: &str, seed: u64) -> Vec<Profile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_role_count = (per_gender as f64 * in_role_fraction).round() as usize;
    let mut out = Vec::with_capacity(per_gender * 2);
    for i in 0..per_gender {
        for gender in Gender::ALL {
            let names = match gender {
                Gender::Male => MALE_NAMES,
                Gender::Female => FEMALE_NAMES,
            };
            let first = names.choose(&mut rng).expect("non-empty");
            let last = SURNAMES.choose(&mut rng).expect("non-empty");
            let mut p = Profile::new(format!("{first} {last}"), gender);
            p.id = Some(format!("syn-{}", out.len()));
            p.birth_year = Some(rng.random_range(1960..2000));
            p.country = Some(COUNTRIES.choose(&mut rng).expect("non-empty").to_string());
            p.interests = pick_some(&mut rng, INTERESTS, 0, 3);
            let years = rng.random_range(1..25);
            if i < in_role_count {
                p.current_job = Some(role.to_string());
                p.industry = Some("Education Management".into());
                p.current_company = Some(format!("{} School", SURNAMES.choose(&mut rng).expect("non-empty")));
                p.skills = pick_some(&mut rng, TEACHING_SKILLS, 2, 5);
                p.experience = Some(format!("{years} years as {role}"));
            } else {
                let (job, industry) = OTHER_JOBS.choose(&mut rng).expect("non-empty");
                p.current_job = Some(job.to_string());
                p.industry = Some(industry.to_string());
                p.current_company = Some(format!("{} Group", SURNAMES.choose(&mut rng).expect("non-empty")));
                p.skills = pick_some(&mut rng, OTHER_SKILLS, 2, 5);
                p.experience = Some(format!("{years} years as {job}"));
            }
            p.education = pick_some(&mut rng, DEGREES, 1, 3);
            p.certifications = pick_some(&mut rng, CERTS, 0, 2);
            out.push(p);
        }
    }
    out
}
