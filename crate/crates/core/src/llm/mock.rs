//! Offline stand-in for the chat-completions service. Output depends only on
//! the prompt text and model name.

use sha2::{Digest, Sha256};

use crate::label::format_label;
use crate::prompt::{DiagnosisPrompt, Section};

/// (findings, causes, treatment, follow-up) for one catalog label.
fn canned(label: &str) -> [&'static str; 4] {
    const NORMAL_CAUSES: &str = "No pathological process was identified, so no disease-specific cause applies. Image quality, positioning and the limits of a single study should still be considered before excluding disease.";
    const NORMAL_TREATMENT: &str = "No treatment is indicated on the basis of this study. Maintain a healthy lifestyle with balanced nutrition, regular exercise and avoidance of smoking.";
    match label {
        "ct-scan.chest.cancer-test.adenocarcinoma" => [
            "The chest CT scan is consistent with adenocarcinoma, a non-small cell lung cancer that usually arises in the peripheral lung.",
            "Smoking is the leading risk factor; second-hand smoke, radon, occupational carcinogens such as asbestos, air pollution and family history also contribute.",
            "Management depends on stage and may include surgical resection, chemotherapy, radiotherapy, targeted therapy for driver mutations (for example EGFR or ALK) and immunotherapy. Smoking cessation is strongly advised.",
            "Refer to a thoracic oncologist for staging with biopsy and molecular testing. Schedule regular follow-up imaging to monitor treatment response.",
        ],
        "ct-scan.chest.cancer-test.benign" => [
            "The chest CT scan shows a lesion with benign characteristics.",
            "Benign lung nodules commonly result from prior infection, granulomas, hamartomas or inflammation.",
            "No cancer treatment is required. Any underlying infection or inflammatory condition should be treated as appropriate.",
            "Arrange surveillance CT at the interval recommended by a pulmonologist to confirm stability of the lesion.",
        ],
        "ct-scan.chest.cancer-test.large-cell-carcinoma" => [
            "The chest CT scan is consistent with large cell carcinoma, an aggressive undifferentiated non-small cell lung cancer.",
            "Tobacco smoking is the dominant risk factor, followed by occupational exposures, radon and genetic predisposition.",
            "Treatment may combine surgery for early disease with chemotherapy, radiotherapy and immunotherapy. Smoking cessation support should be offered.",
            "Urgent referral to a thoracic oncologist for staging and a multidisciplinary treatment plan. Close follow-up imaging is required.",
        ],
        "ct-scan.chest.cancer-test.malignant" => [
            "The chest CT scan shows a malignant lesion of the lung.",
            "Risk factors include smoking, environmental and occupational carcinogens, prior radiation exposure and family history.",
            "Tissue diagnosis is needed to select therapy, which may include surgery, chemotherapy, radiotherapy, targeted therapy or immunotherapy.",
            "Refer promptly to an oncologist for biopsy and staging. Schedule follow-up visits and imaging to track progression.",
        ],
        "ct-scan.chest.cancer-test.normal" => [
            "The chest CT scan shows no evidence of lung cancer.",
            NORMAL_CAUSES,
            NORMAL_TREATMENT,
            "Continue routine screening if the patient meets lung cancer screening criteria, and seek review if new respiratory symptoms develop.",
        ],
        "ct-scan.chest.cancer-test.squamous-cell-carcinoma" => [
            "The chest CT scan is consistent with squamous cell carcinoma, a non-small cell lung cancer that typically arises in the central airways.",
            "It is strongly associated with smoking; occupational exposures and chronic airway inflammation also increase risk.",
            "Options include surgery, chemotherapy, radiotherapy and immunotherapy depending on stage. Smoking cessation is essential.",
            "Refer to a thoracic oncologist for staging and bronchoscopic biopsy, with regular follow-up imaging during treatment.",
        ],
        "mri.brain.alzheimer-test.mild-demented" => [
            "The brain MRI scan is consistent with mild dementia due to Alzheimer's disease, with early cognitive decline affecting memory and daily function.",
            "Contributing factors include genetic predisposition, age, prior brain injury and lifestyle factors such as smoking, high blood pressure and high cholesterol.",
            "Consult a neurologist regarding cholinesterase inhibitors. Good nutrition, regular exercise, cognitive stimulation and control of vascular risk factors are recommended.",
            "Schedule regular follow-up sessions to monitor cognition and adjust the treatment plan, and involve the family in care planning.",
        ],
        "mri.brain.alzheimer-test.moderate-demented" => [
            "The brain MRI scan indicates Alzheimer's disease at a moderate stage, suggesting considerable cognitive decline and functional disability.",
            "Potential causes include genetic factors, brain damage and lifestyle factors such as smoking, high blood pressure and high cholesterol.",
            "Consult a neurologist and follow the indicated medication, which may include cholinesterase inhibitors or memantine. Good nutrition, exercise and cognitive therapy can help slow progression and improve quality of life.",
            "Attend regular follow-up sessions to monitor the condition and ensure the treatment plan is working. These visits are also an opportunity for the patient and family to raise concerns.",
        ],
        "mri.brain.alzheimer-test.non-demented" => [
            "The brain MRI scan shows no features of Alzheimer's dementia.",
            NORMAL_CAUSES,
            "No dementia treatment is indicated. Physical activity, social engagement, a balanced diet and control of blood pressure and cholesterol support long-term brain health.",
            "Routine screening is sufficient. Seek neurological review if memory or cognitive complaints arise.",
        ],
        "mri.brain.alzheimer-test.very-mild-demented" => [
            "The brain MRI scan is consistent with very mild dementia, an early stage of Alzheimer's disease with subtle cognitive changes.",
            "Risk factors include age, genetics such as APOE e4, cardiovascular risk factors, physical inactivity and prior head injury.",
            "Neurologist assessment is advised; early pharmacological treatment may be considered alongside exercise, cognitive training and vascular risk management.",
            "Arrange follow-up cognitive assessments and repeat imaging to monitor progression.",
        ],
        "mri.brain.tumor-test.glioma-tumor" => [
            "The brain MRI scan is consistent with a glioma, a tumor arising from glial cells.",
            "Most gliomas have no identifiable cause; risk factors include prior ionizing radiation and rare inherited syndromes.",
            "Treatment typically involves neurosurgical resection followed by radiotherapy and chemotherapy such as temozolomide, guided by histology and molecular markers. Steroids may reduce swelling.",
            "Refer urgently to neurosurgery and neuro-oncology. Follow-up MRI at regular intervals is needed to monitor for recurrence.",
        ],
        "mri.brain.tumor-test.meningioma-tumor" => [
            "The brain MRI scan is consistent with a meningioma, usually a slow-growing tumor of the meninges.",
            "Risk factors include prior radiation exposure, female sex hormones and neurofibromatosis type 2.",
            "Small asymptomatic meningiomas may be observed; symptomatic or growing lesions are treated with surgery or stereotactic radiosurgery.",
            "Neurosurgical consultation and periodic MRI surveillance to assess growth.",
        ],
        "mri.brain.tumor-test.no-tumor" => [
            "The brain MRI scan shows no evidence of a brain tumor.",
            NORMAL_CAUSES,
            NORMAL_TREATMENT,
            "No tumor follow-up is required. Seek review if headaches, seizures or neurological symptoms develop.",
        ],
        "mri.brain.tumor-test.pituitary-tumor" => [
            "The brain MRI scan is consistent with a pituitary tumor, most often a benign adenoma.",
            "Most arise sporadically; some are linked to inherited syndromes such as MEN1.",
            "Management may include dopamine agonists for prolactinomas, transsphenoidal surgery, radiotherapy and hormone replacement as required.",
            "Refer to endocrinology and neurosurgery for hormonal evaluation and visual field testing, with follow-up MRI.",
        ],
        "oct-scan.rential.rential-oct-test.choroidal-neovascularization" => [
            "The retinal OCT scan shows choroidal neovascularization, with abnormal vessels growing beneath the retina that can leak fluid and blood.",
            "It most commonly complicates age-related macular degeneration; high myopia, inflammation and smoking are additional risk factors.",
            "Intravitreal anti-VEGF injections are the mainstay of treatment. Smoking cessation and a diet rich in leafy greens are recommended.",
            "Consult an ophthalmologist promptly and attend regular OCT follow-up to guide re-treatment intervals.",
        ],
        "oct-scan.rential.rential-oct-test.diabetic-macular-edema" => [
            "The retinal OCT scan confirms diabetic macular edema: leaking blood vessels have caused fluid to accumulate in the macula, which may blur or reduce vision.",
            "It can be caused by poor blood sugar management, high blood pressure or high cholesterol, which damage the blood vessels of the eye.",
            "Treatment may require anti-VEGF injections to reduce swelling and improve vision, together with control of blood sugar, blood pressure and cholesterol.",
            "Consult an ophthalmologist and an endocrinologist to build a personalized treatment plan, with regular follow-up OCT examinations.",
        ],
        "oct-scan.rential.rential-oct-test.multiple-drusen" => [
            "The retinal OCT scan shows multiple drusen, yellow deposits beneath the retina that are a hallmark of early age-related macular degeneration.",
            "Drusen are associated with ageing, genetics, smoking and cardiovascular risk factors.",
            "No direct treatment removes drusen; antioxidant supplementation may be considered, along with smoking cessation and UV protection.",
            "Regular ophthalmology review and home monitoring with an Amsler grid to detect progression.",
        ],
        "oct-scan.rential.rential-oct-test.normal" => [
            "The retinal OCT scan shows normal retinal architecture.",
            NORMAL_CAUSES,
            NORMAL_TREATMENT,
            "Routine eye examinations are recommended, more frequently for patients with diabetes.",
        ],
        "ultrasound.breast.cancer-test.benign" => [
            "The breast ultrasound shows a lesion with benign features, such as a fibroadenoma or cyst.",
            "Benign breast lesions are commonly related to hormonal changes and are frequent in younger women.",
            "No cancer treatment is required; symptomatic cysts may be aspirated and enlarging lesions excised.",
            "Arrange short-interval follow-up ultrasound as advised by a breast specialist to confirm stability.",
        ],
        "ultrasound.breast.cancer-test.malignant" => [
            "The breast ultrasound shows a lesion with malignant features.",
            "Risk factors include age, BRCA mutations, family history, hormonal exposure, obesity and alcohol use.",
            "Core biopsy is needed; treatment may include surgery, radiotherapy, chemotherapy, endocrine therapy and targeted therapy based on receptor status.",
            "Refer urgently to a breast surgeon and oncologist, with scheduled follow-up visits throughout treatment.",
        ],
        "ultrasound.breast.cancer-test.normal" => [
            "The breast ultrasound shows normal breast tissue.",
            NORMAL_CAUSES,
            NORMAL_TREATMENT,
            "Continue routine breast screening appropriate to age and risk.",
        ],
        "xray.chest.pneumonia-test.covid19" => [
            "The chest X-ray shows findings consistent with COVID-19 pneumonia.",
            "The cause is infection with the SARS-CoV-2 virus; older age, obesity and chronic disease increase the risk of severe illness.",
            "Supportive care with oxygen as needed; antiviral therapy or corticosteroids may be indicated depending on severity. Isolation measures should be followed.",
            "Monitor oxygen saturation and symptoms, and arrange clinical review with repeat imaging if the patient deteriorates.",
        ],
        "xray.chest.pneumonia-test.normal" => [
            "The chest X-ray shows clear lungs with no sign of pneumonia.",
            NORMAL_CAUSES,
            NORMAL_TREATMENT,
            "No follow-up imaging is needed unless respiratory symptoms persist or worsen.",
        ],
        "xray.chest.pneumonia-test.pneumonia" => [
            "The chest X-ray shows consolidation consistent with pneumonia.",
            "Pneumonia is caused by bacterial, viral or fungal infection; smoking, advanced age and chronic illness increase risk.",
            "Antibiotics are prescribed for bacterial pneumonia, along with rest, hydration and antipyretics.",
            "Review the patient within 48 to 72 hours and repeat the chest X-ray after six weeks to confirm resolution.",
        ],
        "xray.chest.pneumonia-test.turberculosis" => [
            "The chest X-ray shows changes consistent with pulmonary tuberculosis.",
            "Tuberculosis is caused by Mycobacterium tuberculosis; close contact, HIV infection, malnutrition and diabetes increase risk.",
            "A multi-drug regimen such as isoniazid, rifampicin, pyrazinamide and ethambutol is required, with adherence support and infection control.",
            "Refer to a tuberculosis or infectious disease specialist, notify public health and monitor with sputum tests and follow-up imaging.",
        ],
        _ => [
            "The imaging study was classified but no further detail is available.",
            "Causes could not be determined from the classification alone.",
            "Treatment should be decided by the responsible clinician.",
            "Arrange clinical follow-up as appropriate.",
        ],
    }
}

/// Deterministic completion containing all four required section headings.
pub fn mock_completion(prompt: &DiagnosisPrompt, model_name: &str) -> String {
    let label = format_label(&prompt.source_label);
    let parts = canned(&label);
    let mut hasher = Sha256::new();
    hasher.update(model_name.as_bytes());
    hasher.update([0]);
    hasher.update(prompt.text.as_bytes());
    let reference = hex::encode(&hasher.finalize()[..4]);
    let mut out = String::new();
    for (section, body) in Section::ALL.iter().zip(parts) {
        out.push_str("## ");
        out.push_str(section.heading());
        out.push('\n');
        out.push_str(body);
        out.push_str("\n\n");
    }
    out.push_str(&format!("(Offline mock response, model {model_name}, reference {reference}.)\n"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::catalog;
    use crate::prompt::generate_prompt;

    #[test]
    fn every_label_has_specific_content() {
        for label in catalog().entries() {
            let parts = canned(&format_label(label));
            assert_ne!(parts[0], canned("unknown")[0], "{label}");
        }
    }

    #[test]
    fn mock_is_deterministic_and_complete() {
        for label in catalog().entries() {
            let p = generate_prompt(label).unwrap();
            let a = mock_completion(&p, "gpt-3.5-turbo");
            assert_eq!(a, mock_completion(&p, "gpt-3.5-turbo"));
            for s in Section::ALL {
                assert!(a.contains(&format!("## {}\n", s.heading())), "{label}: {s}");
            }
            assert_ne!(a, mock_completion(&p, "other-model"));
        }
    }
}
