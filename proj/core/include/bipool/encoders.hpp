#pragma once

#include <utility>

#include "bipool/autodiff.hpp"
#include "bipool/codebook.hpp"
#include "bipool/features.hpp"
#include "bipool/tensor.hpp"

namespace bipool {

/// Pooled outer product of two feature streams with equal location counts:
/// x = A^T B, summed over locations in ascending order.
Tensor bilinear_pool(const LocationFeatures& a, const LocationFeatures& b);

/// Closed-form gradients of the pooled outer product:
/// dl/dA = B (dl/dx)^T and dl/dB = A (dl/dx).
std::pair<Tensor, Tensor> bilinear_backward(const LocationFeatures& a,
                                            const LocationFeatures& b,
                                            const Tensor& dl_dx);

/// Descriptor normalization: signed square-root then l2.
Tensor normalize_descriptor(const Tensor& vec);

/// Pooled, normalized image descriptor from an outer-product encoder.
struct BilinearDescriptor {
  size_t m = 0;
  size_t n = 0;
  Tensor vec;  // length m*n
  bool normalized = false;

  static BilinearDescriptor from_pooled(const Tensor& pooled, bool normalize);
};

// Orderless encoders over a codebook; all sum over locations in ascending
// row order. These are the definitional forms; the trainable path composes
// the same math from autodiff primitives (see graph builders below).
Tensor netvlad_encode(const LocationFeatures& f, const Codebook& cb);  // k x d
Tensor netfv_encode(const LocationFeatures& f, const Codebook& cb);    // k x 2d
Tensor netbovw_encode(const LocationFeatures& f, const Codebook& cb);  // k

/// Classical nearest-center residual aggregation; the non-differentiable
/// reference oracle. Ties break to the lowest center index.
Tensor hard_vlad_encode(const LocationFeatures& f, const Codebook& cb);

/// Low-rank projection applied to one stream before the outer product.
struct ProjectionMatrix {
  enum class Init { Pca, Random };
  size_t in_dim = 0;
  size_t out_dim = 0;
  Tensor p;  // in x out
  Init init_mode = Init::Pca;
};

/// Top-r principal directions of the (mean-centered) sample rows; columns
/// are orthonormal eigenvectors of the covariance, ordered by decreasing
/// eigenvalue.
ProjectionMatrix pca_projection(const Tensor& samples, size_t r);
ProjectionMatrix random_projection(size_t in_dim, size_t r, uint64_t seed);

Tensor project_one_feature(const LocationFeatures& f, const ProjectionMatrix& p);

/// Full-descriptor projection (test oracle for the vec(x^T y) P strategy).
Tensor project_full(const Tensor& vec, const Tensor& p);

/// Kronecker-structured full-descriptor matrix equivalent to projecting one
/// stream: maps vec(X) with X (M x N) to vec(P^T X) with P (M x r).
Tensor kron_structured_projection(const Tensor& p, size_t n);

/// Symmetric eigendecomposition by cyclic Jacobi rotations; returns
/// eigenvalues (descending) and matching orthonormal columns.
void symmetric_eig(const Tensor& a, Tensor& eigenvalues, Tensor& eigenvectors);

// Autodiff graph builders for the trainable encoder forms. F is L x d;
// codebook parameters enter as graph nodes so centers can be fine-tuned.
Var encode_bilinear_graph(Tape& t, Var fa, Var fb);                    // m x n
Var soft_assign_graph(Tape& t, Var f, Var w, Var b);                   // L x k
Var encode_netvlad_graph(Tape& t, Var f, Var w, Var b, Var mu);        // k x d
Var encode_netfv_graph(Tape& t, Var f, Var w, Var b, Var mu);          // k x 2d
Var encode_netbovw_graph(Tape& t, Var f, Var w, Var b);                // k

}  // namespace bipool
