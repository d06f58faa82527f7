// SPDX-License-Identifier: Apache-2.0

#ifndef CRB_ARTIFACTS_HPP
#define CRB_ARTIFACTS_HPP

#include <string>
#include <json.hpp>

#include "crb/affine_form.hpp"
#include "crb/cv_rb.hpp"
#include "crb/kl_field.hpp"
#include "crb/mesh.hpp"
#include "crb/reduced_basis.hpp"

namespace crb
{

using Json = nlohmann::json;

//
// Artifacts are JSON documents {"format": "crb-artifact", "kind", "schema_version",
// "payload"}. Dense matrices are {"rows", "cols", "data"} in column-major order; sparse
// matrices are {"rows", "cols", "i", "j", "v"} coordinate triplets. Doubles are written
// with round-trip precision, so a reload reproduces every value bitwise.
//
inline constexpr int kArtifactSchemaVersion = 1;

Json mesh_to_json(const Mesh &mesh);
Mesh mesh_from_json(const Json &j);

Json theta_to_json(const ThetaMap &theta);
ThetaMap theta_from_json(const Json &j);

Json affine_form_to_json(const AffineForm &form);
AffineForm affine_form_from_json(const Json &j);

Json reduced_basis_to_json(const ReducedBasis &rb);
ReducedBasis reduced_basis_from_json(const Json &j);

Json kl_basis_to_json(const KLBasis &kl);
KLBasis kl_basis_from_json(const Json &j);

Json cv_basis_to_json(const CVBasis &basis);
CVBasis cv_basis_from_json(const Json &j);

// Wraps the payload in the artifact envelope and writes it.
void save_artifact(const std::string &path, const std::string &kind, const Json &payload);
// Reads an artifact, checking the envelope, kind and schema version (ArtifactError).
Json load_artifact(const std::string &path, const std::string &kind);

Json read_json_file(const std::string &path);
void write_text_file(const std::string &path, const std::string &text);

}  // namespace crb

#endif  // CRB_ARTIFACTS_HPP
